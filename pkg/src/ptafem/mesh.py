"""Conforming triangulations of the unit square with bisection refinement.

Each triangle designates a refinement edge (the edge opposite its newest
vertex, stored as that vertex's local index).  Refinement bisects the
refinement edges of marked elements and closes the mesh by propagating
bisections to neighbours, so partitions stay conforming, nested and shape
regular.  Meshes are safe to share for read-only access; `refine` returns
a new partition and never mutates its input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeData:
    pairs: np.ndarray      # (ne, 2) endpoint vertex ids, pairs[:, 0] < pairs[:, 1]
    tri_edges: np.ndarray  # (nt, 3) edge id opposite each local vertex
    counts: np.ndarray     # (ne,) number of adjacent triangles


@dataclass
class MeshPartition:
    vertices: np.ndarray        # (nv, 2) coordinates in the closed unit square
    on_boundary: np.ndarray     # (nv,) bool
    triangles: np.ndarray       # (nt, 3) vertex ids, positively oriented
    refine_edge: np.ndarray     # (nt,) local edge index in {0, 1, 2}
    level: int = 0
    parent_ids: np.ndarray | None = None       # (nt,) element index in previous partition
    prev_vertex_count: int = 0
    new_vertex_edges: np.ndarray | None = None  # (n_new, 2) parent edge endpoints
    _edges: EdgeData | None = field(default=None, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edges(self) -> EdgeData:
        if self._edges is None:
            self._edges = _build_edges(self.triangles)
        return self._edges

    def edge_table(self) -> dict[tuple[int, int], list[int]]:
        """Map from sorted vertex pair to the list of adjacent elements."""
        ed = self.edges()
        table: dict[tuple[int, int], list[int]] = {tuple(p): [] for p in ed.pairs}
        for t in range(self.n_triangles):
            for e in range(3):
                pair = tuple(ed.pairs[ed.tri_edges[t, e]])
                table[pair].append(t)
        return table


def _build_edges(triangles: np.ndarray) -> EdgeData:
    nt = len(triangles)
    # edge e of a triangle is opposite local vertex e
    raw = np.stack([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1)
    raw = np.sort(raw.reshape(-1, 2), axis=1)
    pairs, inverse = np.unique(raw, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(nt, 3)
    counts = np.bincount(inverse, minlength=len(pairs))
    return EdgeData(pairs=pairs, tri_edges=tri_edges, counts=counts)


def _geometric_boundary(vertices: np.ndarray) -> np.ndarray:
    x, y = vertices[:, 0], vertices[:, 1]
    return (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)


def signed_areas(mesh: MeshPartition) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_angles(mesh: MeshPartition) -> np.ndarray:
    """Interior angles per element, in radians, shape (nt, 3)."""
    p = mesh.vertices[mesh.triangles]
    angles = np.empty((mesh.n_triangles, 3))
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        cosang = (a * b).sum(axis=1) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles[:, i] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return angles


def min_angle_deg(mesh: MeshPartition) -> float:
    return float(np.degrees(triangle_angles(mesh).min()))


def assign_longest_refinement_edges(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Refinement edge = longest edge; ties broken by lowest opposite-vertex index."""
    p = vertices[triangles]
    lengths = np.stack([np.linalg.norm(p[:, (e + 1) % 3] - p[:, (e + 2) % 3], axis=1)
                        for e in range(3)], axis=1)
    return np.argmax(lengths, axis=1).astype(np.int64)  # argmax takes the first maximum


def crisscross_mesh(n: int) -> MeshPartition:
    """n-by-n grid of squares, each split into 4 triangles about its centre."""
    if n < 1:
        raise MeshError("grid size must be at least 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    grid = np.array([(x, y) for y in xs for x in xs])
    centers = np.array([((i + 0.5) / n, (j + 0.5) / n) for j in range(n) for i in range(n)])
    vertices = np.vstack([grid, centers])

    def gid(i, j):
        return j * (n + 1) + i

    ncorner = (n + 1) ** 2
    tris = []
    for j in range(n):
        for i in range(n):
            sw, se = gid(i, j), gid(i + 1, j)
            ne, nw = gid(i + 1, j + 1), gid(i, j + 1)
            c = ncorner + j * n + i
            tris += [(sw, se, c), (se, ne, c), (ne, nw, c), (nw, sw, c)]
    triangles = np.array(tris, dtype=np.int64)
    return MeshPartition(
        vertices=vertices,
        on_boundary=_geometric_boundary(vertices),
        triangles=triangles,
        refine_edge=assign_longest_refinement_edges(vertices, triangles),
        level=0,
        parent_ids=np.full(len(triangles), -1, dtype=np.int64),
        prev_vertex_count=len(vertices),
        new_vertex_edges=np.empty((0, 2), dtype=np.int64),
    )


def uniform_initial_mesh() -> MeshPartition:
    """The 144-element starting partition (6x6 criss-crossed squares)."""
    return crisscross_mesh(6)


def mark_dorfler(indicators, theta: float) -> set[int]:
    """Bulk marking: smallest element set carrying a `theta` fraction of the
    total squared indicator, greedy by descending value, ties by lower index."""
    eta = np.asarray(indicators, dtype=float)
    if eta.size == 0:
        raise MeshError("cannot mark an empty mesh")
    if not np.isfinite(eta).all() or (eta < 0).any():
        raise MeshError("indicators must be finite and nonnegative")
    if not 0.0 < theta <= 1.0:
        raise MeshError(f"theta must be in (0, 1], got {theta}")
    total = eta.sum()
    if total == 0.0:
        return set()
    order = np.lexsort((np.arange(eta.size), -eta))
    csum = np.cumsum(eta[order])
    target = theta * total * (1.0 - 1e-12)
    k = int(np.searchsorted(csum, target, side="left"))
    return set(int(i) for i in order[: k + 1])


def refine(mesh: MeshPartition, marked) -> MeshPartition:
    """Bisect the refinement edge of every marked element, then close the mesh.

    The output is conforming, its vertices extend the input vertices, and
    every new vertex is the midpoint of an input edge.
    """
    nt, nv = mesh.n_triangles, mesh.n_vertices
    marked = np.asarray(sorted(set(int(t) for t in marked)), dtype=np.int64)
    if marked.size and (marked[0] < 0 or marked[-1] >= nt):
        raise MeshError("marked set contains invalid element indices")

    ed = mesh.edges()
    ne = len(ed.pairs)
    ref_eids = ed.tri_edges[np.arange(nt), mesh.refine_edge]
    split = np.zeros(ne, dtype=bool)
    split[ref_eids[marked]] = True

    # closure: an element with any split edge must also split its refinement edge
    while True:
        has_split = split[ed.tri_edges].any(axis=1)
        need = has_split & ~split[ref_eids]
        if not need.any():
            break
        split[ref_eids[need]] = True

    split_ids = np.nonzero(split)[0]
    midpoint_of = np.full(ne, -1, dtype=np.int64)
    midpoint_of[split_ids] = nv + np.arange(len(split_ids))
    new_edges = ed.pairs[split_ids]
    new_coords = 0.5 * (mesh.vertices[new_edges[:, 0]] + mesh.vertices[new_edges[:, 1]])
    vertices = np.vstack([mesh.vertices, new_coords])

    pair_to_eid = {(int(a), int(b)): int(e) for e, (a, b) in enumerate(ed.pairs)}

    out_tris: list[tuple[int, int, int]] = []
    out_refedge: list[int] = []
    out_parent: list[int] = []

    def emit(tri, re_local, parent):
        a, b = tri[(re_local + 1) % 3], tri[(re_local + 2) % 3]
        eid = pair_to_eid.get((a, b) if a < b else (b, a))
        if eid is None or not split[eid]:
            out_tris.append(tri)
            out_refedge.append(re_local)
            out_parent.append(parent)
            return
        m = int(midpoint_of[eid])
        peak = tri[re_local]
        # children keep orientation; the midpoint becomes the newest vertex
        emit((peak, tri[(re_local + 1) % 3], m), 2, parent)
        emit((peak, m, tri[(re_local + 2) % 3]), 1, parent)

    tris = mesh.triangles
    refedges = mesh.refine_edge
    for t in range(nt):
        emit((int(tris[t, 0]), int(tris[t, 1]), int(tris[t, 2])), int(refedges[t]), t)

    return MeshPartition(
        vertices=vertices,
        on_boundary=_geometric_boundary(vertices),
        triangles=np.array(out_tris, dtype=np.int64),
        refine_edge=np.array(out_refedge, dtype=np.int64),
        level=mesh.level + 1,
        parent_ids=np.array(out_parent, dtype=np.int64),
        prev_vertex_count=nv,
        new_vertex_edges=new_edges,
    )


def interpolate_p1(values_coarse, mesh_coarse: MeshPartition, mesh_fine: MeshPartition):
    """Nodal transfer onto a one-step refinement.

    Retained vertices keep their value, each new vertex gets the mean of its
    parent edge's endpoint values, and boundary vertices are reset to zero
    (homogeneous Dirichlet data).
    """
    values = np.asarray(values_coarse, dtype=float)
    nvc = mesh_coarse.n_vertices
    if values.shape != (nvc,):
        raise MeshError(f"expected {nvc} coarse nodal values, got shape {values.shape}")
    if mesh_fine.prev_vertex_count != nvc or mesh_fine.n_vertices < nvc or \
            not np.array_equal(mesh_fine.vertices[:nvc], mesh_coarse.vertices):
        raise MeshError("meshes are not nested (fine mesh is not a refinement of coarse)")
    out = np.empty(mesh_fine.n_vertices)
    out[:nvc] = values
    parents = mesh_fine.new_vertex_edges
    if parents is not None and len(parents):
        out[nvc:] = 0.5 * (values[parents[:, 0]] + values[parents[:, 1]])
    out[mesh_fine.on_boundary] = 0.0
    return out


def element_geometry(mesh: MeshPartition, element: int):
    """Return (area, diameter, P1 basis gradients (3, 2)) of one element."""
    if not 0 <= element < mesh.n_triangles:
        raise MeshError(f"element index {element} out of range")
    p = mesh.vertices[mesh.triangles[element]]
    d1, d2 = p[1] - p[0], p[2] - p[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    if det <= 0.0:
        raise MeshError(f"element {element} is degenerate or misoriented (2*area = {det})")
    area = 0.5 * det
    h = max(np.linalg.norm(p[(e + 1) % 3] - p[(e + 2) % 3]) for e in range(3))
    grads = np.empty((3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[i, 0] = (p[j, 1] - p[k, 1]) / det
        grads[i, 1] = (p[k, 0] - p[j, 0]) / det
    return area, float(h), grads


def validate_mesh(mesh: MeshPartition, expect_unit_cover: bool = True) -> None:
    """Raise MeshError on any violated structural invariant."""
    areas = signed_areas(mesh)
    if (areas <= 0).any():
        raise MeshError("mesh contains degenerate or misoriented elements")
    if expect_unit_cover and abs(areas.sum() - 1.0) > 1e-12:
        raise MeshError(f"element areas sum to {areas.sum()!r}, expected 1")
    geo = _geometric_boundary(mesh.vertices)
    if not np.array_equal(geo, mesh.on_boundary):
        raise MeshError("on_boundary flags disagree with vertex coordinates")
    ed = mesh.edges()
    if ed.counts.max(initial=0) > 2:
        raise MeshError("an edge is shared by more than two elements")
    single = ed.pairs[ed.counts == 1]
    for a, b in single:
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        on_side = any(pa[d] == pb[d] and pa[d] in (0.0, 1.0) for d in (0, 1))
        if expect_unit_cover and not on_side:
            raise MeshError(f"interior edge ({a},{b}) has only one adjacent element "
                            "(hanging vertex)")
    if not np.isin(mesh.refine_edge, (0, 1, 2)).all():
        raise MeshError("refine_edge entries must lie in {0, 1, 2}")
