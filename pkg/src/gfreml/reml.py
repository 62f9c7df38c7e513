"""REML estimate of the training time and the spectral diagnostics around it.

All functions take the eigen-projected residual coefficients ``c`` and the
eigenvalues ``lam`` of the training operator.  Sums of ``c_k^2 exp(-t lam_k)``
are evaluated with a shared max-shift; terms with ``c_k = 0`` are dropped
(they contribute nothing and would otherwise put ``log 0`` in the shift).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import AllCoefficientsZero, DimensionMismatch, NegativeTime, NoUpperBracket

DEFAULT_REL_TOL = 1e-10
DEGENERATE_SPREAD = 1e-12
MAX_BRACKET_FACTOR = 1e6
MAX_ITER = 200

Status = Literal["interior_root", "boundary_zero", "degenerate"]


@dataclass(frozen=True)
class RemlFit:
    t_hat: float
    sigma2_hat: float
    edf: float
    q_value: float
    condition_i: bool
    condition_ii: bool
    psi_at_t_hat: float
    iterations: int
    status: Status

    def to_dict(self) -> dict:
        return {
            "t_hat": self.t_hat,
            "sigma2_hat": self.sigma2_hat,
            "edf": self.edf,
            "q_value": self.q_value,
            "condition_i": self.condition_i,
            "condition_ii": self.condition_ii,
            "psi_at_t_hat": self.psi_at_t_hat,
            "iterations": self.iterations,
            "status": self.status,
        }


def _inputs(c, lam) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(c, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    if c.shape != lam.shape or c.size == 0:
        raise DimensionMismatch(f"coefficients {c.shape} and eigenvalues {lam.shape} must be non-empty and equal length")
    return c, lam


def _time(t) -> float:
    t = float(t)
    if not t >= 0.0:
        raise NegativeTime(f"training time must be nonnegative, got {t}")
    return t


def _support(c: np.ndarray, lam: np.ndarray):
    """Log-weights ``log c_k^2`` and eigenvalues restricted to ``c_k != 0``."""
    nz = c != 0.0
    if not np.any(nz):
        raise AllCoefficientsZero("every projected residual coefficient is zero")
    return 2.0 * np.log(np.abs(c[nz])), lam[nz]


def _log_weighted_sum(logc2: np.ndarray, lam_s: np.ndarray, t: float) -> tuple[float, np.ndarray]:
    """Return ``log sum c^2 e^{-t lam}`` and the normalised softmax weights."""
    z = logc2 - t * lam_s
    shift = z.max()
    e = np.exp(z - shift)
    total = e.sum()
    return float(shift + np.log(total)), e / total


def q_objective(c, lam, t: float) -> float:
    """``Q(t) = n log(sum c_k^2 e^{-t lam_k}) + t sum lam_k``."""
    c, lam = _inputs(c, lam)
    t = _time(t)
    logc2, lam_s = _support(c, lam)
    log_s, _ = _log_weighted_sum(logc2, lam_s, t)
    return c.size * log_s + t * float(lam.sum())


def q_derivatives(c, lam, t: float) -> tuple[float, float]:
    """``(Q'(t), Q''(t))``; ``Q'' = n var_p(lam)`` under the softmax weights ``p``."""
    c, lam = _inputs(c, lam)
    t = _time(t)
    logc2, lam_s = _support(c, lam)
    _, p = _log_weighted_sum(logc2, lam_s, t)
    mean = float(p @ lam_s)
    dq = float(lam.sum()) - c.size * mean
    d2q = c.size * float(p @ (lam_s - mean) ** 2)
    return dq, d2q


def spectral_losses(c, lam, t: float) -> np.ndarray:
    """Optimised spectral losses ``J_k = c_k^2 e^{-t lam_k}`` (squared eigen-residuals)."""
    c, lam = _inputs(c, lam)
    t = _time(t)
    return c**2 * np.exp(-t * lam)


def psi(c, lam, t: float) -> float:
    """Empirical covariance between the eigenvalues and the spectral losses."""
    c, lam = _inputs(c, lam)
    J = spectral_losses(c, lam, t)
    return float(np.mean((lam - lam.mean()) * (J - J.mean())))


def edf(lam, t: float) -> float:
    """Effective degrees of freedom ``sum (1 - e^{-t lam_k})``."""
    lam = np.asarray(lam, dtype=float).ravel()
    t = _time(t)
    return float(-np.sum(np.expm1(-t * lam)))


def esc_curve(c, lam, t_grid) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float).ravel()
    if t_grid.size > 1 and np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be sorted ascending")
    return np.array([psi(c, lam, t) for t in t_grid])


def v_criterion(c, lam, t: float, n: int | None = None) -> float:
    """Penalised weighted training error ``(n^-1 sum c_k^2 e^{-t lam_k}) e^{t lam_bar}``."""
    c, lam = _inputs(c, lam)
    t = _time(t)
    n = c.size if n is None else int(n)
    logc2, lam_s = _support(c, lam)
    log_s, _ = _log_weighted_sum(logc2, lam_s, t)
    # V grows like e^{t lam_bar} and legitimately overflows to inf at very large t
    with np.errstate(over="ignore"):
        return float(np.exp(log_s - np.log(n) + t * lam.mean()))


def _profiled_sigma2(c: np.ndarray, lam: np.ndarray, t: float) -> float:
    return float(np.mean(c**2 * np.exp(-t * lam)))


def _finish(c, lam, t, iterations, status, cond_i, cond_ii) -> RemlFit:
    return RemlFit(
        t_hat=float(t),
        sigma2_hat=_profiled_sigma2(c, lam, t),
        edf=edf(lam, t),
        q_value=q_objective(c, lam, t),
        condition_i=bool(cond_i),
        condition_ii=bool(cond_ii),
        psi_at_t_hat=psi(c, lam, t),
        iterations=int(iterations),
        status=status,
    )


def solve_stopping_time(c, lam, rel_tol: float = DEFAULT_REL_TOL) -> RemlFit:
    """Minimise ``Q`` over ``t >= 0`` by safeguarded Newton on ``Q'``.

    ``Q`` is convex, so ``Q'`` is nondecreasing and a sign change brackets the
    unique root.  Returns ``t_hat = 0`` with status ``boundary_zero`` when
    ``Q'(0) >= 0`` and status ``degenerate`` when the eigenvalues are all
    equal (``Q`` is then flat).
    """
    c, lam = _inputs(c, lam)
    _support(c, lam)
    top = float(np.max(np.abs(lam)))
    spread = float(lam.max() - lam.min())
    cond_ii = top > 0.0 and spread >= DEGENERATE_SPREAD * top
    dq0, _ = q_derivatives(c, lam, 0.0)
    cond_i = dq0 < 0.0
    if not cond_ii:
        return _finish(c, lam, 0.0, 0, "degenerate", cond_i, cond_ii)
    if not cond_i:
        return _finish(c, lam, 0.0, 0, "boundary_zero", cond_i, cond_ii)

    lam_bar = float(lam.mean())
    t_scale = 1.0 / lam_bar
    smallest_pos = float(lam[lam > 0.0].min())
    t_cap = MAX_BRACKET_FACTOR / smallest_pos

    lo, hi = 0.0, t_scale
    iterations = 0
    while True:
        dq, _ = q_derivatives(c, lam, hi)
        iterations += 1
        if dq > 0.0:
            break
        if dq == 0.0:
            return _finish(c, lam, hi, iterations, "interior_root", cond_i, cond_ii)
        lo = hi
        hi *= 2.0
        if hi > t_cap:
            raise NoUpperBracket(
                f"Q' still negative at t={hi:.3e}, beyond {MAX_BRACKET_FACTOR:g}/lambda_min+"
            )

    t = 0.5 * (lo + hi)
    probed = False
    for _ in range(MAX_ITER):
        dq, d2q = q_derivatives(c, lam, t)
        iterations += 1
        if dq < 0.0:
            lo = t
        elif dq > 0.0:
            hi = t
        else:
            lo = hi = t
        grad_ok = abs(dq) * t_scale <= rel_tol
        if hi - lo <= rel_tol * t and grad_ok:
            break
        if grad_ok and not probed:
            # shrink the bracket around an already converged iterate
            probed = True
            for s in (-0.5 * rel_tol, 0.5 * rel_tol):
                tp = t * (1.0 + s)
                dqp, _ = q_derivatives(c, lam, tp)
                iterations += 1
                if dqp < 0.0:
                    lo = max(lo, tp)
                elif dqp > 0.0:
                    hi = min(hi, tp)
            if hi - lo <= rel_tol * t:
                break
        step_ok = d2q > 0.0
        t_new = t - dq / d2q if step_ok else np.nan
        if not (step_ok and lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        if t_new == t:
            break
        t = t_new
    return _finish(c, lam, t, iterations, "interior_root", cond_i, cond_ii)
