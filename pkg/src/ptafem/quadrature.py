"""Quadrature rules on the reference triangle and on edges.

All triangle rules use interior points and positive weights that sum to 1,
so an integral over a physical element T is area(T) * sum(w_q * g(x_q)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TriangleRule:
    degree: int
    points: np.ndarray   # (nq, 3) barycentric coordinates, strictly interior
    weights: np.ndarray  # (nq,), positive, summing to 1


def _cyclic(a: float, b: float, c: float) -> list[tuple[float, float, float]]:
    return [(a, b, c), (c, a, b), (b, c, a)]


def _rule(degree: int, groups) -> TriangleRule:
    pts, wts = [], []
    for w, bary in groups:
        for p in bary:
            pts.append(p)
            wts.append(w)
    points = np.array(pts, dtype=float)
    weights = np.array(wts, dtype=float)
    points.setflags(write=False)
    weights.setflags(write=False)
    return TriangleRule(degree=degree, points=points, weights=weights)


def _degree1() -> TriangleRule:
    third = 1.0 / 3.0
    return _rule(1, [(1.0, [(third, third, third)])])


def _degree2() -> TriangleRule:
    # three interior points, exact for quadratics
    return _rule(2, [(1.0 / 3.0, _cyclic(2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0))])


def _degree4() -> TriangleRule:
    # classic symmetric 6-point rule
    w1 = 0.22338158967801146570
    a1 = 0.10810301816807022736
    b1 = 0.44594849091596488632
    w2 = 0.10995174365532186764
    a2 = 0.81684757298045851308
    b2 = 0.09157621350977074346
    return _rule(4, [(w1, _cyclic(a1, b1, b1)), (w2, _cyclic(a2, b2, b2))])


def _degree5() -> TriangleRule:
    # symmetric 7-point rule (centroid plus two orbits)
    s15 = np.sqrt(15.0)
    third = 1.0 / 3.0
    a1 = (6.0 - s15) / 21.0
    b1 = (9.0 + 2.0 * s15) / 21.0
    w1 = (155.0 - s15) / 1200.0
    a2 = (6.0 + s15) / 21.0
    b2 = (9.0 - 2.0 * s15) / 21.0
    w2 = (155.0 + s15) / 1200.0
    return _rule(5, [(9.0 / 40.0, [(third, third, third)]),
                     (w1, _cyclic(b1, a1, a1)),
                     (w2, _cyclic(b2, a2, a2))])


_RULES = {1: _degree1, 2: _degree2, 4: _degree4, 5: _degree5}
MAX_DEGREE = 5


def triangle_rule(degree: int) -> TriangleRule:
    """Smallest available interior-point rule exact to at least `degree`."""
    if degree < 1 or degree > MAX_DEGREE:
        raise ValueError(f"quadrature degree must be in [1, {MAX_DEGREE}], got {degree}")
    for d in sorted(_RULES):
        if d >= degree:
            return _RULES[d]()
    raise AssertionError("unreachable")


def edge_rule(npoints: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Gauss points on [0, 1] as (positions, weights); weights sum to 1."""
    nodes, weights = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (nodes + 1.0), 0.5 * weights
