"""P1 finite element space and quadrature-based operator assembly.

All operators live on the interior (non-Dirichlet) degrees of freedom;
constrained vertices never enter the assembled matrices.  Assembly is
single threaded and bit-reproducible: element contributions are reduced in
a fixed order.  Assembled matrices and vectors are treated as immutable.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import MeshPartition, MeshError
from .quadrature import TriangleRule, triangle_rule


class AssemblyError(ValueError):
    pass


class FeSpace:
    """Continuous piecewise-linear space over a conforming partition.

    Precomputes element geometry and quadrature data.  Interior dofs are
    ordered by ascending vertex index; with ``constrain_boundary=False``
    every vertex becomes a dof (diagnostic mode, no Dirichlet elimination).
    """

    def __init__(self, mesh: MeshPartition, quad_degree: int = 4,
                 constrain_boundary: bool = True):
        self.mesh = mesh
        self.rule: TriangleRule = triangle_rule(quad_degree)
        self.constrain_boundary = constrain_boundary

        tris = mesh.triangles
        coords = mesh.vertices[tris]                      # (nt, 3, 2)
        d1 = coords[:, 1] - coords[:, 0]
        d2 = coords[:, 2] - coords[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if (det <= 0).any():
            bad = int(np.argmax(det <= 0))
            raise AssemblyError(f"degenerate or misoriented element {bad}")
        self.area = 0.5 * det                             # (nt,)

        grads = np.empty((len(tris), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = (coords[:, j, 1] - coords[:, k, 1]) / det
            grads[:, i, 1] = (coords[:, k, 0] - coords[:, j, 0]) / det
        self.grads = grads

        edge_len = np.stack([np.linalg.norm(coords[:, (e + 1) % 3] - coords[:, (e + 2) % 3],
                                            axis=1) for e in range(3)], axis=1)
        self.h = edge_len.max(axis=1)                     # element diameters

        self.phi = self.rule.points                       # (nq, 3) P1 values at quad points
        self.qw = self.rule.weights                       # (nq,)
        self.qp_xy = np.einsum("qk,tkd->tqd", self.phi, coords)  # (nt, nq, 2)

        nv = mesh.n_vertices
        if constrain_boundary:
            interior = np.nonzero(~mesh.on_boundary)[0]
        else:
            interior = np.arange(nv)
        self.interior_vertices = interior
        self.n_dofs = len(interior)
        dof_of_vertex = np.full(nv, -1, dtype=np.int64)
        dof_of_vertex[interior] = np.arange(self.n_dofs)
        self.dof_of_vertex = dof_of_vertex

        # flattened COO index helpers shared by every assembled operator,
        # so all matrices carry the identical sparsity pattern
        dofs_tri = dof_of_vertex[tris]                    # (nt, 3)
        rows = np.broadcast_to(dofs_tri[:, :, None], (len(tris), 3, 3)).ravel()
        cols = np.broadcast_to(dofs_tri[:, None, :], (len(tris), 3, 3)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        self._mat_rows = rows[keep]
        self._mat_cols = cols[keep]
        self._mat_keep = keep
        vrows = dofs_tri.ravel()
        vkeep = vrows >= 0
        self._vec_rows = vrows[vkeep]
        self._vec_keep = vkeep

    # -- nodal field helpers -------------------------------------------------

    def scatter(self, u_dofs) -> np.ndarray:
        """Interior dof vector -> full nodal vector (zeros on constrained)."""
        u_dofs = np.asarray(u_dofs, dtype=float)
        if u_dofs.shape != (self.n_dofs,):
            raise AssemblyError(f"expected {self.n_dofs} dof values, got {u_dofs.shape}")
        full = np.zeros(self.mesh.n_vertices)
        full[self.interior_vertices] = u_dofs
        return full

    def restrict(self, u_full) -> np.ndarray:
        return np.asarray(u_full, dtype=float)[self.interior_vertices]

    def values_at_qp(self, u_full) -> np.ndarray:
        """Field values at every quadrature point, shape (nt, nq)."""
        return np.asarray(u_full, dtype=float)[self.mesh.triangles] @ self.phi.T

    def gradients(self, u_full) -> np.ndarray:
        """Elementwise constant gradients of a P1 field, shape (nt, 2)."""
        return np.einsum("tk,tkd->td",
                         np.asarray(u_full, dtype=float)[self.mesh.triangles], self.grads)

    # -- reductions ----------------------------------------------------------

    def matrix_from_local(self, local) -> sp.csr_matrix:
        vals = np.ascontiguousarray(local, dtype=float).ravel()[self._mat_keep]
        mat = sp.csr_matrix((vals, (self._mat_rows, self._mat_cols)),
                            shape=(self.n_dofs, self.n_dofs))
        return mat

    def vector_from_local(self, local) -> np.ndarray:
        vals = np.ascontiguousarray(local, dtype=float).ravel()[self._vec_keep]
        return np.bincount(self._vec_rows, weights=vals, minlength=self.n_dofs)


def build_space(mesh: MeshPartition, quad_degree: int = 4,
                constrain_boundary: bool = True) -> FeSpace:
    return FeSpace(mesh, quad_degree=quad_degree, constrain_boundary=constrain_boundary)


def _check_coeff(space: FeSpace, values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        t, q = np.unravel_index(int(np.argmax(bad)), values.shape)
        x, y = space.qp_xy[t, q]
        raise AssemblyError(
            f"non-finite {what} in element {t} at quadrature point {q} (x={x}, y={y})")


def _coeff_array(space: FeSpace, c) -> np.ndarray:
    nt, nq = space.qp_xy.shape[:2]
    return np.broadcast_to(np.asarray(c, dtype=float), (nt, nq))


def assemble_stiffness_like(space: FeSpace, c11, c22) -> sp.csr_matrix:
    """Matrix of integrals c11 * dx(phi_i) dx(phi_j) + c22 * dy(phi_i) dy(phi_j),
    with the diagonal coefficient given per quadrature point."""
    c11 = _coeff_array(space, c11)
    c22 = _coeff_array(space, c22)
    _check_coeff(space, c11, "coefficient")
    _check_coeff(space, c22, "coefficient")
    m1 = (c11 * space.qw).sum(axis=1) * space.area        # quadrature means, (nt,)
    m2 = (c22 * space.qw).sum(axis=1) * space.area
    gx, gy = space.grads[:, :, 0], space.grads[:, :, 1]
    local = np.einsum("t,tj,ti->tji", m1, gx, gx) + np.einsum("t,tj,ti->tji", m2, gy, gy)
    return space.matrix_from_local(local)


def assemble_A2p(space: FeSpace, law, u) -> sp.csr_matrix:
    """Diffusion operator frozen at the state u: entries of
    integral kappa(u) grad(phi_i) . grad(phi_j).  Applying it to u's own
    coefficients evaluates the nonlinear form at (u; u)."""
    uq = space.values_at_qp(space.scatter(u))
    return assemble_stiffness_like(space, law.kappa11(uq), law.kappa22(uq))


def assemble_A1p(space: FeSpace, law, u, u_grad=None) -> sp.csr_matrix:
    """State derivative of the diffusion form: entries
    integral phi_i * (kappa'(u) grad z) . grad(phi_j), with z = u unless a
    separate gradient field is supplied.  Generally nonsymmetric."""
    u_full = space.scatter(u)
    uq = space.values_at_qp(u_full)
    g_full = u_full if u_grad is None else space.scatter(u_grad)
    gu = space.gradients(g_full)                          # (nt, 2)
    k1 = np.asarray(law.dkappa11(uq), dtype=float)
    k2 = np.asarray(law.dkappa22(uq), dtype=float)
    _check_coeff(space, k1, "diffusion derivative")
    _check_coeff(space, k2, "diffusion derivative")
    d1 = (k1 * space.qw) @ space.phi                      # (nt, 3): sum_q w_q k' phi_i
    d2 = (k2 * space.qw) @ space.phi
    gx, gy = space.grads[:, :, 0], space.grads[:, :, 1]
    local = (np.einsum("t,tj,ti->tji", space.area * gu[:, 0], gx, d1)
             + np.einsum("t,tj,ti->tji", space.area * gu[:, 1], gy, d2))
    return space.matrix_from_local(local)


def assemble_R(space: FeSpace, beta11, beta22) -> sp.csr_matrix:
    """Regularization matrix: weighted Laplacian with nonnegative diagonal
    weights per quadrature point.  Symmetric positive semi-definite."""
    b11 = _coeff_array(space, beta11)
    b22 = _coeff_array(space, beta22)
    if (b11 < 0).any() or (b22 < 0).any():
        raise AssemblyError("regularization weights must be nonnegative")
    return assemble_stiffness_like(space, b11, b22)


def assemble_fQ(space: FeSpace, f) -> np.ndarray:
    """Load vector of the source against every (interior) basis function."""
    fq = np.asarray(f(space.qp_xy[..., 0], space.qp_xy[..., 1]), dtype=float)
    fq = np.broadcast_to(fq, space.qp_xy.shape[:2])
    _check_coeff(space, fq, "source value")
    local = space.area[:, None] * ((fq * space.qw) @ space.phi)
    return space.vector_from_local(local)


def assemble_A(space: FeSpace, law, u_state, z) -> np.ndarray:
    """Direct vector assembly of the diffusion form at (u_state; z).

    Kept as an independent evaluation path: the controller computes the
    same quantity as A2p(u) @ z, and tests compare the two.
    """
    uq = space.values_at_qp(space.scatter(u_state))
    c1 = np.asarray(law.kappa11(uq), dtype=float)
    c2 = np.asarray(law.kappa22(uq), dtype=float)
    _check_coeff(space, c1, "diffusion coefficient")
    _check_coeff(space, c2, "diffusion coefficient")
    m1 = (c1 * space.qw).sum(axis=1) * space.area
    m2 = (c2 * space.qw).sum(axis=1) * space.area
    gz = space.gradients(space.scatter(z))
    local = (m1 * gz[:, 0])[:, None] * space.grads[:, :, 0] \
        + (m2 * gz[:, 1])[:, None] * space.grads[:, :, 1]
    return space.vector_from_local(local)


def residual(space: FeSpace, law, u, fQ, delta: float) -> np.ndarray:
    """delta * fQ - A(u; u), with A(u; u) evaluated through the frozen matrix."""
    return delta * fQ - assemble_A2p(space, law, u) @ np.asarray(u, dtype=float)


def write_coo(matrix, path) -> None:
    """Dump a sparse matrix as 'row col value' text for debugging."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {format(float(v), '.17g')}\n")
