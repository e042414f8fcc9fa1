"""Problem definitions: diffusion laws, sources, regularization weights.

A problem bundles the solution-dependent diffusion law kappa (diagonal,
possibly anisotropic), its derivative, the source, a rule producing the
regularization weight from the level-initial iterate, the damping cap, and
optionally an exact solution.  Everything here is immutable and pure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class DiffusionLaw:
    """Diagonal diffusion coefficient kappa = diag(kappa11, kappa22) and its
    entrywise derivative, as vectorized functions of the state."""
    kappa11: Callable
    kappa22: Callable
    dkappa11: Callable
    dkappa22: Callable
    name: str = ""
    sample_interval: tuple[float, float] = (-10.0, 10.0)
    kappa_bound: Optional[float] = None    # declared sup of kappa, if known
    dkappa_bound: Optional[float] = None   # declared sup of |kappa'|, if known


def scalar_law(kappa, dkappa, **meta) -> DiffusionLaw:
    return DiffusionLaw(kappa11=kappa, kappa22=kappa,
                        dkappa11=dkappa, dkappa22=dkappa, **meta)


@dataclass(frozen=True)
class ExactSolution:
    u: Callable        # u(x, y)
    grad: Callable     # grad(x, y) -> (ux, uy)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    law: DiffusionLaw
    source: Callable                   # f(x, y)
    beta_builder: Callable             # (space, u0_full) -> (beta11, beta22) per quad point
    gamma_max: float
    exact_solution: Optional[ExactSolution] = None

    def __post_init__(self):
        if not self.gamma_max > 1.0:
            raise ValueError(f"gamma_max must exceed 1, got {self.gamma_max}")


def example1() -> ProblemSpec:
    """Anisotropic diffusion with a corner in kappa' at the state value 1/2.

    kappa_jj(s) = 2 + tanh((s-a)|s-a| / eps_j) with a = 1/2,
    eps_1 = 4e-4, eps_2 = 4e-2.  The x-direction law is two orders of
    magnitude steeper than the y-direction one.  The regularization weight
    is 1 + |kappa_jj'| evaluated at the level-initial iterate.
    """
    a, k = 0.5, 2.0
    eps = (4.0e-4, 4.0e-2)

    def make_component(epsj):
        def kappa(s):
            t = np.asarray(s, dtype=float) - a
            return k + np.tanh(t * np.abs(t) / epsj)

        def dkappa(s):
            t = np.asarray(s, dtype=float) - a
            arg = np.clip(t * np.abs(t) / epsj, -350.0, 350.0)
            return (2.0 * np.abs(t) / epsj) / np.cosh(arg) ** 2

        return kappa, dkappa

    k11, dk11 = make_component(eps[0])
    k22, dk22 = make_component(eps[1])
    law = DiffusionLaw(kappa11=k11, kappa22=k22, dkappa11=dk11, dkappa22=dk22,
                       name="anisotropic-tanh", sample_interval=(-10.0, 10.0),
                       kappa_bound=k + 1.0)

    def source(x, y):
        return 2.0 * (1.0 - x) * (1.0 - y) * np.expm1(6.0 * x * x) * np.expm1(6.0 * y * y)

    def beta_builder(space, u0_full):
        uq = space.values_at_qp(u0_full)
        return 1.0 + np.abs(dk11(uq)), 1.0 + np.abs(dk22(uq))

    return ProblemSpec(name="ex1", law=law, source=source,
                       beta_builder=beta_builder, gamma_max=5.0)


def example2() -> ProblemSpec:
    """Scalar diffusion with a thin layer: kappa(s) = 1 + 1/(eps + (s-a)^2),
    a = 1/2, eps = 1e-5, manufactured so u = sin(pi x) sin(pi y).

    The damping cap is (sqrt(3)/2) / sqrt(eps), the ratio kappa'/kappa at
    the state where kappa' peaks.  The regularization weight is 1 (plain
    Laplacian smoothing).
    """
    a, k, eps = 0.5, 1.0, 1.0e-5

    def kappa(s):
        t = np.asarray(s, dtype=float) - a
        return k + 1.0 / (eps + t * t)

    def dkappa(s):
        t = np.asarray(s, dtype=float) - a
        return -2.0 * t / (eps + t * t) ** 2

    law = scalar_law(kappa, dkappa, name="thin-layer",
                     sample_interval=(-2.0, 2.0),
                     kappa_bound=k + 1.0 / eps,
                     dkappa_bound=(3.0 * np.sqrt(3.0) / 8.0) * eps ** -1.5)

    def exact_u(x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    def exact_grad(x, y):
        return (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
                np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))

    def source(x, y):
        s = exact_u(x, y)
        ux, uy = exact_grad(x, y)
        # -div(kappa(u) grad u) = -kappa'(u) |grad u|^2 + 2 pi^2 kappa(u) u
        return -dkappa(s) * (ux * ux + uy * uy) + 2.0 * np.pi ** 2 * kappa(s) * s

    def beta_builder(space, u0_full):
        return 1.0, 1.0

    return ProblemSpec(name="ex2", law=law, source=source,
                       beta_builder=beta_builder,
                       gamma_max=(np.sqrt(3.0) / 2.0) * eps ** -0.5,
                       exact_solution=ExactSolution(u=exact_u, grad=exact_grad))


def constant_diffusion(kappa_value: float = 3.0, source=None,
                       name: str = "linear-debug") -> ProblemSpec:
    """Linear debug problem: constant kappa, zero derivative, no smoothing
    matrix (beta = 0).  A single undamped step solves it exactly."""
    if source is None:
        def source(x, y):
            return np.ones_like(np.asarray(x, dtype=float))

    kv = float(kappa_value)

    def kappa(s):
        return np.full_like(np.asarray(s, dtype=float), kv)

    def dkappa(s):
        return np.zeros_like(np.asarray(s, dtype=float))

    law = scalar_law(kappa, dkappa, name=f"constant-{kv}",
                     kappa_bound=kv, dkappa_bound=0.0)

    def beta_builder(space, u0_full):
        return 0.0, 0.0

    return ProblemSpec(name=name, law=law, source=source,
                       beta_builder=beta_builder, gamma_max=5.0)


@dataclass(frozen=True)
class LawReport:
    min_kappa: float
    max_kappa: float
    max_abs_dkappa: float
    lipschitz_kappa: float
    lipschitz_dkappa: float
    per_component: dict


def validate_law(law: DiffusionLaw, interval=None, samples: int = 200001) -> LawReport:
    """Sample the law densely and report bounds and empirical Lipschitz
    constants of kappa and kappa'.  A large Lipschitz constant of kappa'
    flags a kink (non-differentiable point) in the derivative.

    Raises ValueError if any sampled kappa value is nonpositive.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    lo, hi = interval if interval is not None else law.sample_interval
    s = np.linspace(lo, hi, samples)
    ds = s[1] - s[0]
    per = {}
    for comp, (kf, dkf) in (("kappa11", (law.kappa11, law.dkappa11)),
                            ("kappa22", (law.kappa22, law.dkappa22))):
        kv = np.asarray(kf(s), dtype=float)
        dkv = np.asarray(dkf(s), dtype=float)
        per[comp] = {
            "min_kappa": float(kv.min()),
            "max_kappa": float(kv.max()),
            "max_abs_dkappa": float(np.abs(dkv).max()),
            "lipschitz_kappa": float(np.abs(np.diff(kv)).max() / ds),
            "lipschitz_dkappa": float(np.abs(np.diff(dkv)).max() / ds),
        }
    min_kappa = min(p["min_kappa"] for p in per.values())
    if min_kappa <= 0.0:
        raise ValueError(f"diffusion law loses ellipticity on [{lo}, {hi}]: "
                         f"min kappa = {min_kappa}")
    return LawReport(
        min_kappa=min_kappa,
        max_kappa=max(p["max_kappa"] for p in per.values()),
        max_abs_dkappa=max(p["max_abs_dkappa"] for p in per.values()),
        lipschitz_kappa=max(p["lipschitz_kappa"] for p in per.values()),
        lipschitz_dkappa=max(p["lipschitz_dkappa"] for p in per.values()),
        per_component=per,
    )
