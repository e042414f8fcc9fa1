"""Outer adaptive loop: solve, estimate, mark, refine, transfer.

One run occupies one process and is fully deterministic in single-threaded
execution; all file writes go through a temp-file-then-rename step.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .assembly import build_space
from .controller import (ExitReason, IterationRecord, RegParams, solve_level,
                         update_delta)
from .estimator import element_indicators, error_norms, global_estimator
from .mesh import (MeshPartition, interpolate_p1, mark_dorfler, min_angle_deg,
                   refine, uniform_initial_mesh)
from .problems import ProblemSpec, example1, example2
from .vtk_io import write_vtk


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str = "ex2"
    q: float = 0.865
    gamma_max: Optional[float] = None     # overrides the problem's cap
    tol: float = 1e-7
    theta: float = 0.5
    max_levels: int = 40
    quad_degree: int = 4
    out_dir: Optional[str] = None
    export_levels: tuple[int, ...] = ()
    monotone_gamma: bool = False
    eta_floor: float = 0.0                # stop once a Converged level's eta drops below

    def validate(self) -> None:
        if not 0.0 < self.q < 1.0:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if self.tol <= 0.0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_levels < 0:
            raise ConfigError(f"max_levels must be nonnegative, got {self.max_levels}")
        if self.gamma_max is not None and self.gamma_max <= 1.0:
            raise ConfigError(f"gamma_max must exceed 1, got {self.gamma_max}")
        if self.eta_floor < 0.0:
            raise ConfigError(f"eta_floor must be nonnegative, got {self.eta_floor}")
        if self.quad_degree < 1:
            raise ConfigError(f"quad_degree must be at least 1, got {self.quad_degree}")


@dataclass
class LevelRow:
    level: int
    dof: int
    iterations: int
    exit: str
    r_norm: float
    gamma10: float
    gamma01: float
    sigma01: float
    alpha: float
    alpha_Rw: float
    delta: float
    eta: float
    err_l2: float
    err_h1: float
    min_angle: float = float("nan")   # diagnostic, not written to levels.csv


@dataclass
class ExportPayload:
    level: int
    mesh: MeshPartition
    u_full: np.ndarray
    eta_sq: np.ndarray
    zeta_sq: np.ndarray


@dataclass
class RunSummary:
    config: RunConfig
    problem: str
    gamma_max: float
    rows: list[LevelRow]
    records: list[tuple[int, IterationRecord]]
    exports: list[ExportPayload]
    wall_time: float
    aborted: bool
    diagnostic: str = ""
    final_mesh: Optional[MeshPartition] = None
    final_u: Optional[np.ndarray] = None


def get_problem(name: str) -> ProblemSpec:
    if name == "ex1":
        return example1()
    if name == "ex2":
        return example2()
    raise ConfigError(f"unknown problem {name!r} (expected 'ex1' or 'ex2')")


def run(config: RunConfig, problem: Optional[ProblemSpec] = None,
        initial_params: Optional[RegParams] = None, progress=None) -> RunSummary:
    """Execute the adaptive loop.  Custom problems and non-default starting
    parameters are library-level options; the CLI only exposes ex1/ex2."""
    config.validate()
    prob = problem if problem is not None else get_problem(config.problem)
    gamma_max = config.gamma_max if config.gamma_max is not None else prob.gamma_max
    if gamma_max <= 1.0:
        raise ConfigError(f"effective gamma_max must exceed 1, got {gamma_max}")

    if initial_params is None:
        params = RegParams(gamma10=gamma_max, sigma01=0.0, alpha=0.0,
                           delta=1.0 / gamma_max, q=config.q, gamma_max=gamma_max)
    else:
        params = replace(initial_params, q=config.q, gamma_max=gamma_max)

    mesh = uniform_initial_mesh()
    u_full: Optional[np.ndarray] = None
    r_prev: Optional[float] = None
    rows: list[LevelRow] = []
    all_records: list[tuple[int, IterationRecord]] = []
    exports: list[ExportPayload] = []
    consecutive_failed = 0
    aborted = False
    diagnostic = ""
    t0 = time.perf_counter()

    for level in range(config.max_levels):
        space = build_space(mesh, quad_degree=config.quad_degree)
        u0 = np.zeros(space.n_dofs) if u_full is None else space.restrict(u_full)
        result = solve_level(space, prob, params, u0, r_prev, config.tol,
                             monotone_gamma=config.monotone_gamma)
        delta_next = update_delta(result)
        u_full = space.scatter(result.u)

        field_ = element_indicators(space, prob, u_full)
        eta = global_estimator(field_)
        if prob.exact_solution is not None:
            err_l2, err_h1 = error_norms(space, u_full, prob.exact_solution)
        else:
            err_l2 = err_h1 = float("nan")

        term = result.params
        alpha_rw = result.records[-1].alpha_Rw if result.records else 0.0
        row = LevelRow(level=level, dof=space.n_dofs, iterations=len(result.records),
                       exit=result.exit.value, r_norm=result.r_norm,
                       gamma10=term.gamma10, gamma01=term.gamma01,
                       sigma01=term.sigma01, alpha=term.alpha, alpha_Rw=alpha_rw,
                       delta=params.delta, eta=eta, err_l2=err_l2, err_h1=err_h1,
                       min_angle=min_angle_deg(mesh))
        rows.append(row)
        all_records.extend((level, rec) for rec in result.records)
        if level in config.export_levels:
            exports.append(ExportPayload(level=level, mesh=mesh, u_full=u_full,
                                         eta_sq=field_.eta_sq, zeta_sq=field_.zeta_sq))
        if progress is not None:
            progress(f"level {level:3d}  dof {space.n_dofs:6d}  it {len(result.records):3d}  "
                     f"{result.exit.value:<19s}  |r| {result.r_norm:.3e}  "
                     f"g10 {term.gamma10:8.3f}  delta {params.delta:.4f}  eta {eta:.3e}")

        if result.exit is ExitReason.FAILED:
            consecutive_failed += 1
            if consecutive_failed >= 2:
                aborted = True
                diagnostic = (f"two consecutive failed levels ({level - 1}, {level}); "
                              f"{result.diagnostic}".strip("; "))
                break
        else:
            consecutive_failed = 0
        if (result.exit is ExitReason.CONVERGED and config.eta_floor > 0.0
                and eta <= config.eta_floor):
            break
        if level == config.max_levels - 1:
            break

        marked = mark_dorfler(field_.eta_sq, config.theta)
        mesh_new = refine(mesh, marked)
        u_full = interpolate_p1(u_full, mesh, mesh_new)
        mesh = mesh_new
        params = replace(result.params, delta=delta_next, alpha=0.0)
        r_prev = result.r_norm

    return RunSummary(config=config, problem=prob.name, gamma_max=gamma_max,
                      rows=rows, records=all_records, exports=exports,
                      wall_time=time.perf_counter() - t0, aborted=aborted,
                      diagnostic=diagnostic, final_mesh=mesh, final_u=u_full)


# -- file outputs ---------------------------------------------------------------

LEVELS_COLUMNS = ("level", "dof", "iterations", "exit", "r_norm", "gamma10",
                  "gamma01", "sigma01", "alpha", "alpha_Rw", "delta", "eta",
                  "err_l2", "err_h1")
ITERATIONS_COLUMNS = ("level", "n", "r_norm", "beta", "gamma10", "gamma01",
                      "sigma01", "alpha", "alpha_Rw", "delta", "w_norm",
                      "lin_norm", "fl_est", "exit")


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_outputs(summary: RunSummary, out_dir: str) -> dict[str, str]:
    """Write levels.csv, iterations.csv, config.echo and any VTK exports.
    Returns the paths written, keyed by logical name."""
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, str] = {}

    lines = [",".join(LEVELS_COLUMNS)]
    for r in summary.rows:
        lines.append(",".join(_fmt(v) for v in (
            r.level, r.dof, r.iterations, r.exit, r.r_norm, r.gamma10, r.gamma01,
            r.sigma01, r.alpha, r.alpha_Rw, r.delta, r.eta, r.err_l2, r.err_h1)))
    paths["levels"] = os.path.join(out_dir, "levels.csv")
    _atomic_write(paths["levels"], "\n".join(lines) + "\n")

    lines = [",".join(ITERATIONS_COLUMNS)]
    for level, rec in summary.records:
        lines.append(",".join(_fmt(v) for v in (
            level, rec.n, rec.r_norm, rec.beta, rec.gamma10, rec.gamma01,
            rec.sigma01, rec.alpha, rec.alpha_Rw, rec.delta, rec.w_norm,
            rec.lin_norm, rec.fl_est, rec.exit.value if rec.exit else "")))
    paths["iterations"] = os.path.join(out_dir, "iterations.csv")
    _atomic_write(paths["iterations"], "\n".join(lines) + "\n")

    cfg = summary.config
    echo = {
        "problem": cfg.problem, "q": cfg.q, "gamma_max": summary.gamma_max,
        "tol": cfg.tol, "theta": cfg.theta, "max_levels": cfg.max_levels,
        "quad_degree": cfg.quad_degree, "out": cfg.out_dir or "",
        "export_levels": ",".join(str(k) for k in cfg.export_levels),
        "monotone_gamma": cfg.monotone_gamma, "eta_floor": cfg.eta_floor,
    }
    body = "\n".join(f"{k} = {_fmt(v)}" for k, v in sorted(echo.items()))
    paths["config"] = os.path.join(out_dir, "config.echo")
    _atomic_write(paths["config"], body + "\n")

    for payload in summary.exports:
        path = os.path.join(out_dir, f"level_{payload.level}.vtk")
        tmp = path + ".tmp"
        write_vtk(tmp, payload.mesh, point_data={"u": payload.u_full},
                  cell_data={"eta_sq": payload.eta_sq, "zeta_sq": payload.zeta_sq},
                  title=f"level {payload.level}")
        os.replace(tmp, path)
        paths[f"level_{payload.level}"] = path
    return paths
