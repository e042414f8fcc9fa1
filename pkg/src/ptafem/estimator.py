"""Residual-based a posteriori error indicators and true-error norms.

Per element T:  eta_T^2 = h_T^2 |kappa'(u) (grad u)^2 + f|_{L2(T)}^2 + zeta_T^2,
where zeta_T^2 collects half of h_e |[kappa(u) grad u . n]|_{L2(e)}^2 from
each interior edge e of T (h_e is the edge length; boundary edges contribute
nothing).  For P1 fields the elementwise divergence term reduces to
kappa'_jj(u) (du/dx_j)^2 because gradients are constant per element.

Everything here is pure over immutable inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import FeSpace
from .quadrature import edge_rule, triangle_rule


@dataclass(frozen=True)
class IndicatorField:
    eta_sq: np.ndarray    # (nt,) full indicator, squared
    zeta_sq: np.ndarray   # (nt,) jump-only part, squared
    level: int


def element_indicators(space: FeSpace, problem, u_full) -> IndicatorField:
    mesh = space.mesh
    law = problem.law
    u_full = np.asarray(u_full, dtype=float)

    # interior residual, integrated with the same rule as assembly
    uq = space.values_at_qp(u_full)
    gu = space.gradients(u_full)                          # (nt, 2)
    fq = np.broadcast_to(np.asarray(problem.source(space.qp_xy[..., 0],
                                                   space.qp_xy[..., 1]), dtype=float),
                         uq.shape)
    res = (np.asarray(law.dkappa11(uq), dtype=float) * gu[:, 0:1] ** 2
           + np.asarray(law.dkappa22(uq), dtype=float) * gu[:, 1:2] ** 2
           + fq)
    interior_sq = space.area * ((res * res) * space.qw).sum(axis=1)
    eta_sq = space.h ** 2 * interior_sq

    # flux jumps across interior edges, split half to each neighbour
    zeta_sq = np.zeros(mesh.n_triangles)
    ed = mesh.edges()
    interior = np.nonzero(ed.counts == 2)[0]
    if interior.size:
        # adjacency: the two elements of every interior edge
        owners = np.full((len(ed.pairs), 2), -1, dtype=np.int64)
        fill = np.zeros(len(ed.pairs), dtype=np.int64)
        for t in range(mesh.n_triangles):
            for e in range(3):
                eid = ed.tri_edges[t, e]
                owners[eid, fill[eid]] = t
                fill[eid] += 1

        pairs = ed.pairs[interior]
        t1 = owners[interior, 0]
        t2 = owners[interior, 1]
        pa = mesh.vertices[pairs[:, 0]]
        pb = mesh.vertices[pairs[:, 1]]
        tang = pb - pa
        length = np.linalg.norm(tang, axis=1)
        normal = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / length[:, None]

        gpos, gw = edge_rule(2)
        ua = u_full[pairs[:, 0]]
        ub = u_full[pairs[:, 1]]
        jump_sq = np.zeros(len(interior))
        for g, wg in zip(gpos, gw):
            ue = ua + g * (ub - ua)            # shared trace of u on the edge
            k11 = np.asarray(law.kappa11(ue), dtype=float)
            k22 = np.asarray(law.kappa22(ue), dtype=float)
            flux1 = k11 * gu[t1, 0] * normal[:, 0] + k22 * gu[t1, 1] * normal[:, 1]
            flux2 = k11 * gu[t2, 0] * normal[:, 0] + k22 * gu[t2, 1] * normal[:, 1]
            jump_sq += wg * (flux1 - flux2) ** 2
        contrib = length * (length * jump_sq)  # h_e * |J|^2_{L2(e)}
        np.add.at(zeta_sq, t1, 0.5 * contrib)
        np.add.at(zeta_sq, t2, 0.5 * contrib)

    return IndicatorField(eta_sq=eta_sq + zeta_sq, zeta_sq=zeta_sq, level=mesh.level)


def global_estimator(field: IndicatorField) -> float:
    return float(np.sqrt(field.eta_sq.sum()))


def error_norms(space: FeSpace, u_full, exact, quad_degree: int = 5):
    """(L2 error, H1 seminorm error) of the P1 field against an exact
    solution with gradient, by elementwise quadrature of the stated degree."""
    if exact is None:
        raise ValueError("no exact solution available for error norms")
    rule = triangle_rule(quad_degree)
    mesh = space.mesh
    coords = mesh.vertices[mesh.triangles]
    xy = np.einsum("qk,tkd->tqd", rule.points, coords)
    u_full = np.asarray(u_full, dtype=float)

    uh = u_full[mesh.triangles] @ rule.points.T           # (nt, nq)
    ue = np.asarray(exact.u(xy[..., 0], xy[..., 1]), dtype=float)
    l2_sq = (space.area * (((uh - ue) ** 2) * rule.weights).sum(axis=1)).sum()

    gu = space.gradients(u_full)                          # (nt, 2) constant per element
    gx, gy = exact.grad(xy[..., 0], xy[..., 1])
    dx = gu[:, 0:1] - np.asarray(gx, dtype=float)
    dy = gu[:, 1:2] - np.asarray(gy, dtype=float)
    h1_sq = (space.area * ((dx * dx + dy * dy) * rule.weights).sum(axis=1)).sum()
    return float(np.sqrt(l2_sq)), float(np.sqrt(h1_sq))
