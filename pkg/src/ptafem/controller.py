"""Damped, regularized Newton iteration with adaptive parameter control.

Each step solves

    M w = r / gamma10,   M = (alpha/gamma10) R + A1p(u) + (1 + sigma01) A2p(u),
    r = delta * fQ - A(u; u),

by sparse LU, then updates the four control parameters:

  * gamma10 ("damping") targets the contraction rate 1 - 1/gamma10 and is
    re-fit from consecutive residuals whenever the observed rate matches
    the prediction and has stabilized;
  * sigma01 ("Picard weight") scales extra diffusion chosen to cancel the
    projection of the one-step linearization error;
  * alpha ("smoothing scale") keeps the contribution of the smoothing
    matrix R below half the rate tolerance times the residual norm;
  * delta ("source scale") is raised once per refinement level toward 1,
    restoring consistency of the damped problem.

The per-level loop is strictly sequential.  Results are immutable.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FeSpace, assemble_A1p, assemble_A2p, assemble_fQ, assemble_R


class ExitReason(enum.Enum):
    COARSE_ACCEPT = "CoarseAccept"
    PREASYMPTOTIC_ACCEPT = "PreasymptoticAccept"
    CONVERGED = "Converged"
    FAILED = "Failed"


@dataclass(frozen=True)
class RegParams:
    """Regularization state plus the fixed user-set constants.

    eps_T (rate tolerance) and gamma_mono (threshold below which every
    damping update is guaranteed to decrease) derive from q and gamma_max.
    """
    gamma10: float
    sigma01: float
    alpha: float
    delta: float
    q: float
    gamma_max: float

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if not self.gamma_max > 1.0:
            raise ValueError(f"gamma_max must exceed 1, got {self.gamma_max}")
        if not 1.0 <= self.gamma10 <= self.gamma_max:
            raise ValueError(f"gamma10 must lie in [1, gamma_max], got {self.gamma10}")
        if self.sigma01 < 0.0:
            raise ValueError(f"sigma01 must be nonnegative, got {self.sigma01}")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")

    @property
    def gamma01(self) -> float:
        return self.gamma10 * (1.0 + self.sigma01)

    @property
    def eps_T(self) -> float:
        return self.q / self.gamma_max

    @property
    def gamma_mono(self) -> float:
        return self.gamma_max * (1.0 / self.q - 1.0)


@dataclass
class AssembledOperators:
    """Operators frozen at one iterate (shared, read-only after assembly)."""
    A2p: sp.csr_matrix
    A1p: sp.csr_matrix
    R: sp.csr_matrix
    fQ: np.ndarray
    Auu: np.ndarray          # A(u; u) = A2p @ u


def assemble_operators(space: FeSpace, law, u, R, fQ) -> AssembledOperators:
    A2p = assemble_A2p(space, law, u)
    A1p = assemble_A1p(space, law, u)
    return AssembledOperators(A2p=A2p, A1p=A1p, R=R, fQ=fQ,
                              Auu=A2p @ np.asarray(u, dtype=float))


@dataclass
class IterationRecord:
    n: int                   # 1-based step index within the level
    r_norm: float            # residual norm after the step
    r_prev_norm: float
    beta: float              # r_norm / r_prev_norm
    gamma10: float           # parameter values used in this step
    gamma01: float
    sigma01: float
    alpha: float
    delta: float
    w_norm: float
    lin_norm: float          # linearization error via the residual representation
    fl_est: float            # floating-point error estimate (two evaluations of lin)
    alpha_Rw: float          # updated alpha times |R w| of this step
    gamma10_after: float     # parameter values carried into the next step
    sigma01_after: float
    alpha_after: float
    exit: Optional[ExitReason] = None


@dataclass
class LastStepData:
    """Vectors from the terminal step, kept for the source-scale update."""
    gamma10: float
    sigma01: float
    alpha: float
    Rw: np.ndarray
    Aw: np.ndarray           # A(u^n; w^n)
    Auu: np.ndarray          # A(u^n; u^n)
    Auu_next: np.ndarray     # A(u^{n+1}; u^{n+1})


@dataclass
class LevelResult:
    u: np.ndarray
    records: list[IterationRecord]
    exit: ExitReason
    params: RegParams        # terminal parameter state (seeds the next level)
    r_norm: float
    r0_norm: float
    gamma_update_count: int
    fQ: np.ndarray
    last_step: Optional[LastStepData]
    diagnostic: str = ""


# -- linear algebra ----------------------------------------------------------

def build_system_matrix(ops: AssembledOperators, gamma10: float, sigma01: float,
                        alpha: float) -> sp.csr_matrix:
    return (alpha / gamma10) * ops.R + ops.A1p + (1.0 + sigma01) * ops.A2p


def _sparse_solve(M: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    """Direct LU solve with one step of iterative refinement if needed."""
    if M.shape[0] == 0:
        return np.zeros(0)
    lu = spla.splu(M.tocsc())
    x = lu.solve(b)
    bn = np.linalg.norm(b)
    if bn > 0.0 and np.isfinite(x).all():
        res = b - M @ x
        if np.linalg.norm(res) > 1e-12 * bn:
            x = x + lu.solve(res)
    return x


def newton_step(space: FeSpace, law, u, ops: AssembledOperators, params: RegParams):
    """One damped step from u; returns (w, u_next, ops_next, r_next)."""
    r = params.delta * ops.fQ - ops.Auu
    M = build_system_matrix(ops, params.gamma10, params.sigma01, params.alpha)
    w = _sparse_solve(M, r / params.gamma10)
    u_next = np.asarray(u, dtype=float) + w
    ops_next = assemble_operators(space, law, u_next, ops.R, ops.fQ)
    r_next = params.delta * ops.fQ - ops_next.Auu
    return w, u_next, ops_next, r_next


# -- linearization error and floating-point estimate --------------------------

def linearization_error_direct(ops_next: AssembledOperators, ops: AssembledOperators,
                               u_next, w) -> np.ndarray:
    """One-step Taylor remainder of the residual expansion,
    -(A(u+; u+) - A(u; u+) - A1p(u) w), evaluated from assembled operators."""
    u_next = np.asarray(u_next, dtype=float)
    return -(ops_next.Auu - ops.A2p @ u_next - ops.A1p @ np.asarray(w, dtype=float))


def linearization_error_representation(r_next, r, Rw, Aw, gamma10: float,
                                       sigma01: float, alpha: float) -> np.ndarray:
    """The same remainder isolated from the residual recursion; differs from
    the direct evaluation only by floating-point error."""
    return (np.asarray(r_next, dtype=float)
            - (1.0 - 1.0 / gamma10) * np.asarray(r, dtype=float)
            - (alpha / gamma10) * np.asarray(Rw, dtype=float)
            - sigma01 * np.asarray(Aw, dtype=float))


def estimate_fl(lin_direct, lin_representation) -> float:
    return float(np.linalg.norm(np.asarray(lin_representation) - np.asarray(lin_direct)))


# -- parameter updates ---------------------------------------------------------

def update_gamma10(r_prev, r_curr, q: float, gamma_max: float, current: float) -> float:
    """Re-fit the damping from the latest residual pair (call only when gated).

    The raw fit |r|^2 / <r, r - r'> is scaled by q and clamped to
    [1, gamma_max]; a nonpositive denominator carries no rate information
    and yields the fully damped gamma_max.
    """
    r_prev = np.asarray(r_prev, dtype=float)
    nr2 = float(r_prev @ r_prev)
    if nr2 == 0.0:
        return current
    den = nr2 - float(r_prev @ np.asarray(r_curr, dtype=float))
    if den <= 0.0:
        return gamma_max
    return min(gamma_max, max(1.0, q * nr2 / den))


def predict_gamma_decrease(beta_observed: float, gamma10: float, q: float,
                           qbar: float = 1.0) -> bool:
    """Cheap predictor: the next damping update is certain to decrease the
    parameter (factor qbar) when the observed rate overshoots the predicted
    rate by less than (1/gamma10)(1 - q/qbar)."""
    eps_breve = beta_observed - (1.0 - 1.0 / gamma10)
    return eps_breve < (1.0 / gamma10) * (1.0 - q / qbar)


def update_sigma01(r_next, r_prev, Rw, Aw_next, gamma10: float, alpha: float,
                   sigma01: float) -> float:
    """Projection of the (negated) linearization error onto the Picard
    direction A(u+; w); clamped to nonnegative so the term only ever adds
    diffusion.  A vanishing direction leaves the weight unchanged."""
    Aw_next = np.asarray(Aw_next, dtype=float)
    den = float(Aw_next @ Aw_next)
    if den == 0.0:
        return sigma01
    bracket = (-np.asarray(r_next, dtype=float)
               + (1.0 - 1.0 / gamma10) * np.asarray(r_prev, dtype=float)
               + (alpha / gamma10) * np.asarray(Rw, dtype=float)
               + sigma01 * Aw_next)
    return max(0.0, float(bracket @ Aw_next) / den)


def update_alpha(r_next, r_prev, Rw, gamma10: float, alpha: float,
                 eps_T: float) -> float:
    """Smoothing scale for the next step: the deviation of the step from the
    predicted contraction, capped at (eps_T/2)|r+|, normalized by |R w| so
    the contributed term stays below the residual."""
    nRw = float(np.linalg.norm(Rw))
    if nRw == 0.0:
        return 0.0
    dev = np.linalg.norm(np.asarray(r_next, dtype=float)
                         - (1.0 - 1.0 / gamma10) * np.asarray(r_prev, dtype=float)
                         - (alpha / gamma10) * np.asarray(Rw, dtype=float))
    r_next_norm = float(np.linalg.norm(r_next))
    return gamma10 / nRw * min(float(dev), 0.5 * eps_T * r_next_norm)


def compute_itmax(r_prev_level_norm: float, r0_norm: float, gamma10: float,
                  default: int = 20) -> int:
    """Iteration budget: steps needed to pull r0 down to the previous level's
    terminal residual at the accepted rate 1 - 1/(2 gamma10)."""
    if gamma10 <= 1.0:
        return default
    num = math.log(r_prev_level_norm) - math.log(r0_norm)
    if num >= 0.0:
        return default
    return 1 + math.ceil(num / math.log(1.0 - 1.0 / (2.0 * gamma10)))


def update_delta(result: LevelResult) -> float:
    """Source-scale update after a level, gated on delta < 1 and a
    non-failed exit.  Projects the level-terminal balance onto the load
    direction and divides by q_k = min(q^P, q^(1 + 1/gamma10)); the result
    is clamped into [delta, 1] so the scale approaches 1 monotonically.
    """
    p = result.params
    if p.delta >= 1.0 or result.exit is ExitReason.FAILED or result.last_step is None:
        return p.delta
    fQ = result.fQ
    den = float(fQ @ fQ)
    if den == 0.0:
        return p.delta
    ls = result.last_step
    vec = (ls.alpha * ls.Rw
           + ls.gamma10 * (ls.Auu_next - ls.Auu)
           + ls.sigma01 * ls.gamma10 * ls.Aw
           + ls.Auu)
    dtilde = float(fQ @ vec) / den
    qk = min(p.q ** result.gamma_update_count, p.q ** (1.0 + 1.0 / p.gamma10))
    return min(1.0, max(p.delta, dtilde / qk))


# -- exit criteria -------------------------------------------------------------

def check_exit(records: list[IterationRecord], params: RegParams, r0_norm: float,
               r_prev_level_norm: float, itmax: int, tol: float) -> Optional[ExitReason]:
    """Evaluate the exit criteria after the latest completed step.

    Priority: converged-to-tolerance, then the coarse-regime rate accept,
    then the preasymptotic reduction accept, then failure, so tolerance
    always wins and failure never masks success.
    """
    if not records:
        return None
    last = records[-1]
    beta = last.beta
    beta_prev = records[-2].beta if len(records) >= 2 else None
    gamma = last.gamma10
    eps_t = params.eps_T
    steps = len(records)

    if last.r_norm <= tol:
        return ExitReason.CONVERGED
    if (gamma > params.gamma_mono
            and beta_prev is not None
            and abs(beta - beta_prev) <= eps_t
            and abs(beta - (1.0 - 1.0 / gamma)) < eps_t
            and steps > 2):
        return ExitReason.COARSE_ACCEPT
    # the reduction accept compares ratios across two earlier steps, so it
    # needs the same three-iteration history as the coarse-regime accept
    if (beta_prev is not None
            and steps > 2
            and last.r_norm < last.r_prev_norm
            and last.r_prev_norm <= min(r0_norm, r_prev_level_norm)
            and beta < 1.0 - 1.0 / (2.0 * gamma)
            and abs(beta_prev - beta) <= 0.5 * eps_t):
        return ExitReason.PREASYMPTOTIC_ACCEPT
    if beta > 1.0 + 1.0 / gamma or steps > itmax:
        return ExitReason.FAILED
    return None


def _gamma_gate(gamma: float, beta: float, beta_prev: Optional[float], eps_t: float,
                gamma_history: list[float], step: int) -> bool:
    """The damping is re-fit only when it exceeds 1, the observed rate matched
    the prediction and stabilized, and the parameter was held fixed over the
    last two steps (at most one update every three iterations)."""
    if gamma <= 1.0 or beta_prev is None or step < 3:
        return False
    if abs(beta - beta_prev) > eps_t:
        return False
    if abs(beta - (1.0 - 1.0 / gamma)) >= eps_t:
        return False
    return gamma_history[step - 3] == gamma


# -- per-level solve -----------------------------------------------------------

def solve_level(space: FeSpace, problem, params: RegParams, u0,
                r_prev_level_norm: Optional[float], tol: float, *,
                itmax_default: int = 20,
                monotone_gamma: bool = False) -> LevelResult:
    """Run the damped iteration on one refinement level until an exit fires.

    Rebuilds the smoothing matrix from the level-initial iterate, resets
    alpha to |r0|, carries gamma10 / sigma01 / delta over from the caller,
    and applies the parameter updates after every step (the terminal values
    seed the next level).  A Failed exit is a valid result, not an error.
    """
    law = problem.law
    u0 = np.asarray(u0, dtype=float)
    fQ = assemble_fQ(space, problem.source)
    b11, b22 = problem.beta_builder(space, space.scatter(u0))
    R = assemble_R(space, b11, b22)

    gamma, sigma, delta = params.gamma10, params.sigma01, params.delta
    q, eps_t = params.q, params.eps_T

    ops = assemble_operators(space, law, u0, R, fQ)
    r = delta * fQ - ops.Auu
    r_norm = float(np.linalg.norm(r))
    r0_norm = r_norm

    def terminal(gamma, sigma, alpha):
        return replace(params, gamma10=gamma, sigma01=sigma, alpha=alpha)

    if not np.isfinite(r_norm):
        return LevelResult(u=u0, records=[], exit=ExitReason.FAILED,
                           params=terminal(gamma, sigma, 0.0), r_norm=r_norm,
                           r0_norm=r0_norm, gamma_update_count=0, fQ=fQ,
                           last_step=None, diagnostic="non-finite initial residual")
    alpha = r0_norm
    if r_prev_level_norm is None:
        r_prev_level_norm = r0_norm
    if r0_norm <= tol:
        return LevelResult(u=u0, records=[], exit=ExitReason.CONVERGED,
                           params=terminal(gamma, sigma, alpha), r_norm=r0_norm,
                           r0_norm=r0_norm, gamma_update_count=0, fQ=fQ,
                           last_step=None)

    itmax = compute_itmax(r_prev_level_norm, r0_norm, gamma, itmax_default)
    records: list[IterationRecord] = []
    gamma_history: list[float] = []
    u = u0
    beta_prev: Optional[float] = None
    n_updates = 0
    last_step: Optional[LastStepData] = None
    exit_reason: Optional[ExitReason] = None
    diagnostic = ""

    while exit_reason is None:
        step = len(records) + 1
        M = build_system_matrix(ops, gamma, sigma, alpha)
        try:
            w = _sparse_solve(M, r / gamma)
        except RuntimeError as err:       # singular factorization
            exit_reason = ExitReason.FAILED
            diagnostic = f"linear solve failed at step {step}: {err}"
            break
        if not np.isfinite(w).all():
            exit_reason = ExitReason.FAILED
            diagnostic = f"non-finite update at step {step}"
            break
        u_next = u + w
        ops_next = assemble_operators(space, law, u_next, R, fQ)
        r_next = delta * fQ - ops_next.Auu
        r_next_norm = float(np.linalg.norm(r_next))
        if not np.isfinite(r_next_norm):
            exit_reason = ExitReason.FAILED
            diagnostic = f"non-finite residual at step {step}"
            break
        beta = r_next_norm / r_norm
        Rw = R @ w
        Aw = ops.A2p @ w
        Aw_next = ops_next.A2p @ w
        lin_dir = linearization_error_direct(ops_next, ops, u_next, w)
        lin_rep = linearization_error_representation(r_next, r, Rw, Aw, gamma, sigma, alpha)
        fl = estimate_fl(lin_dir, lin_rep)

        rec = IterationRecord(
            n=step, r_norm=r_next_norm, r_prev_norm=r_norm, beta=beta,
            gamma10=gamma, gamma01=gamma * (1.0 + sigma), sigma01=sigma,
            alpha=alpha, delta=delta, w_norm=float(np.linalg.norm(w)),
            lin_norm=float(np.linalg.norm(lin_rep)), fl_est=fl,
            alpha_Rw=0.0, gamma10_after=gamma, sigma01_after=sigma,
            alpha_after=alpha)
        records.append(rec)
        gamma_history.append(gamma)

        exit_reason = check_exit(records, params, r0_norm, r_prev_level_norm, itmax, tol)

        # parameter updates run on every completed step, including the one
        # that exits: the coarse regime leaves each level right after a
        # damping update, which is what walks gamma10 down across levels
        gamma_after = gamma
        if _gamma_gate(gamma, beta, beta_prev, eps_t, gamma_history, step):
            if not monotone_gamma or predict_gamma_decrease(beta, gamma, q):
                gamma_after = update_gamma10(r, r_next, q, params.gamma_max, gamma)
                n_updates += 1
        sigma_after = update_sigma01(r_next, r, Rw, Aw_next, gamma, alpha, sigma)
        alpha_after = update_alpha(r_next, r, Rw, gamma, alpha, eps_t)
        rec.gamma10_after = gamma_after
        rec.sigma01_after = sigma_after
        rec.alpha_after = alpha_after
        rec.alpha_Rw = alpha_after * float(np.linalg.norm(Rw))
        rec.exit = exit_reason

        last_step = LastStepData(gamma10=gamma, sigma01=sigma, alpha=alpha,
                                 Rw=Rw, Aw=Aw, Auu=ops.Auu, Auu_next=ops_next.Auu)
        u, ops, r, r_norm = u_next, ops_next, r_next, r_next_norm
        beta_prev = beta
        gamma, sigma, alpha = gamma_after, sigma_after, alpha_after

    return LevelResult(u=u, records=records, exit=exit_reason,
                       params=terminal(gamma, sigma, alpha), r_norm=r_norm,
                       r0_norm=r0_norm, gamma_update_count=n_updates, fQ=fQ,
                       last_step=last_step, diagnostic=diagnostic)
