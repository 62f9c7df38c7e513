"""Variance-component score test for training-induced signal.

The response is projected onto the orthogonal complement of the initial
prediction, and the ratio statistic ``T = (n-1) y'H y / y'y`` is referred to
its exact null law.  Because ``sigma^2`` cancels in the ratio,
``P(T >= q) = P(sum_k (mu_k - q/(n-1)) z_k^2 >= 0)`` with ``mu`` the spectrum
of the projected operator, which is a weighted chi-square tail evaluated by
Imhof's inversion formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import (
    AllWeightsZero,
    DimensionMismatch,
    IntegrationFailure,
    ZeroInitialization,
    ZeroProjectedResponse,
)
from .spectral import eigendecompose

DEFAULT_TOL = 1e-6
WEIGHT_DROP_REL = 1e-14
# weights of the null law that are this small relative to the spectrum are exact zeros
STAT_WEIGHT_REL = 1e-12
ZERO_F0_REL = 1e-12
MC_SAMPLES = 10_000_000
MC_BATCH = 500_000

Method = Literal["imhof", "monte_carlo", "degenerate"]


@dataclass(frozen=True)
class ScoreTestResult:
    statistic: float
    p_value: float
    projected_eigenvalues: np.ndarray = field(repr=False)
    method: Method
    integration_error: float
    centered_basis: bool = False

    def to_dict(self) -> dict:
        mu = self.projected_eigenvalues
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "method": self.method,
            "integration_error": self.integration_error,
            "centered_basis": self.centered_basis,
            "n_projected": int(mu.size),
            "projected_eigenvalue_max": float(mu.max()),
            "projected_eigenvalue_min": float(mu.min()),
        }


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------
def orthogonal_complement_basis(f0, scale: float = 1.0) -> np.ndarray:
    """Orthonormal ``n x (n-1)`` basis of the complement of ``f0``.

    One Householder reflection sends ``f0/||f0||`` to a multiple of the first
    axis; the remaining columns of the reflector span the complement.
    """
    f0 = np.asarray(f0, dtype=float).ravel()
    n = f0.size
    if n < 2:
        raise DimensionMismatch(f"need n >= 2 for a complement basis, got {n}")
    norm = float(np.linalg.norm(f0))
    if norm < ZERO_F0_REL * np.sqrt(n) * scale or norm == 0.0:
        raise ZeroInitialization(f"initial prediction has norm {norm:.3e}; projector undefined")
    u = f0 / norm
    v = u.copy()
    v[0] += 1.0 if u[0] >= 0.0 else -1.0
    beta = 2.0 / float(v @ v)
    # columns 2..n of I - beta v v^T
    M = -beta * np.outer(v, v[1:])
    M[1:, :] += np.eye(n - 1)
    return M


def centering_basis(n: int) -> np.ndarray:
    """Orthonormal basis of the complement of the all-ones vector."""
    return orthogonal_complement_basis(np.ones(int(n)))


def score_statistic(y, f0, H, M: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Return ``(T, mu)`` with ``mu`` the spectrum of ``M^T H M`` (descending)."""
    y = np.asarray(y, dtype=float).ravel()
    H = np.asarray(H, dtype=float)
    n = y.size
    if n < 3:
        raise DimensionMismatch(f"score test needs n >= 3, got {n}")
    if H.shape != (n, n):
        raise DimensionMismatch(f"operator shape {H.shape} does not match n={n}")
    if M is None:
        M = orthogonal_complement_basis(f0, scale=float(np.sqrt(np.mean(y**2))) or 1.0)
    y_t = M.T @ y
    yy = float(y_t @ y_t)
    if yy <= (1e-14 * float(y @ y)) or yy == 0.0:
        raise ZeroProjectedResponse("response has no component orthogonal to the initial prediction")
    H_t = M.T @ H @ M
    H_t = 0.5 * (H_t + H_t.T)
    mu = eigendecompose(H_t).eigenvalues
    stat = (n - 1) * float(y_t @ H_t @ y_t) / yy
    return stat, np.asarray(mu)


# ---------------------------------------------------------------------------
# Weighted chi-square tail
# ---------------------------------------------------------------------------
def _clean_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 0 or not np.all(np.isfinite(w)):
        raise AllWeightsZero("weights must be a non-empty finite vector")
    top = float(np.max(np.abs(w)))
    if top == 0.0:
        raise AllWeightsZero("all weights are zero")
    w = w / top
    return w[np.abs(w) >= WEIGHT_DROP_REL]


def _integrand(s: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sin(theta(u)) / rho(u)`` at ``u = e^s``; the ``du/u`` factor is absorbed by ``ds``."""
    u = np.exp(s)[:, None]
    wu = w[None, :] * u
    theta = 0.5 * np.sum(np.arctan(wu), axis=1)
    log_rho = 0.25 * np.sum(np.log1p(wu * wu), axis=1)
    return np.sin(theta) * np.exp(-log_rho)


def _imhof_upper(w: np.ndarray, tol: float, max_level: int = 20) -> tuple[float, float]:
    """``P(sum w_k z_k^2 >= 0)`` for normalised weights with mixed signs."""
    m = w.size
    u0 = 1e-8
    # below u0, sin(theta)/rho = theta + O(u^3) with theta ~ 0.5 sum(w) u
    left = 0.5 * float(w.sum()) * u0
    # tail: |integrand| <= 1/(u rho) and rho >= prod(|w_k| u)^(1/2)
    half_log_prod = 0.5 * float(np.sum(np.log(np.abs(w))))
    log_U = (2.0 / m) * (np.log(2.0 / (np.pi * m)) - half_log_prod - np.log(tol / 2.0))
    log_U = max(log_U, 1.0)
    trunc = 2.0 / (np.pi * m) * np.exp(-0.5 * m * log_U - half_log_prod)
    a, b = np.log(u0), log_U

    n_int = 64
    s = np.linspace(a, b, n_int + 1)
    f = _integrand(s, w)
    h = (b - a) / n_int
    trap = h * (f.sum() - 0.5 * (f[0] + f[-1]))
    romberg_prev = None
    for level in range(max_level):
        mids = a + h * (np.arange(n_int) + 0.5)
        trap_new = 0.5 * trap + 0.5 * h * float(_integrand(mids, w).sum())
        romberg = trap_new + (trap_new - trap) / 3.0
        h *= 0.5
        n_int *= 2
        trap = trap_new
        if not np.isfinite(romberg):
            raise IntegrationFailure("non-finite quadrature value")
        # a few forced refinements guard against early agreement on coarse grids
        if romberg_prev is not None and level >= 3:
            err = abs(romberg - romberg_prev) / np.pi + trunc
            if err < tol:
                p = 0.5 + (left + romberg) / np.pi
                return float(np.clip(p, 0.0, 1.0)), float(err)
        romberg_prev = romberg
    raise IntegrationFailure(f"quadrature did not reach tolerance {tol:g}")


def pvalue_weighted_chisq_mc(
    weights, n_samples: int = MC_SAMPLES, seed: int = 0, batch: int = MC_BATCH
) -> tuple[float, float]:
    """Monte Carlo ``P(sum w_k z_k^2 >= 0)`` and its binomial standard error.

    Batch ``j`` draws from ``default_rng([seed, j])`` so the estimate does not
    depend on how the batches are scheduled.
    """
    w = np.asarray(weights, dtype=float).ravel()
    hits = 0
    done = 0
    j = 0
    while done < n_samples:
        size = min(batch, n_samples - done)
        rng = np.random.default_rng([seed, j])
        z = rng.standard_normal((size, w.size))
        hits += int(np.count_nonzero((z * z) @ w >= 0.0))
        done += size
        j += 1
    p = hits / n_samples
    return p, float(np.sqrt(max(p * (1.0 - p), 0.25 / n_samples) / n_samples))


def _pvalue_with_method(weights, tol: float) -> tuple[float, float, Method]:
    w = _clean_weights(weights)
    if np.all(w > 0.0):
        return 1.0, 0.0, "imhof"
    if np.all(w < 0.0):
        return 0.0, 0.0, "imhof"
    try:
        p, err = _imhof_upper(w, tol)
        return p, err, "imhof"
    except IntegrationFailure:
        p, se = pvalue_weighted_chisq_mc(w)
        return p, 3.0 * se, "monte_carlo"


def pvalue_weighted_chisq(weights, tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """``P(sum_k w_k z_k^2 >= 0)`` for iid standard normal ``z`` and its error bound."""
    p, err, _ = _pvalue_with_method(weights, tol)
    return p, err


# ---------------------------------------------------------------------------
# Test
# ---------------------------------------------------------------------------
def score_test(y, f0, H, tol: float = DEFAULT_TOL) -> ScoreTestResult:
    """Score test of no training-induced signal.

    When the initial prediction is numerically zero the projector onto its
    complement is undefined and the mean-centering basis is used instead;
    ``centered_basis`` records the substitution.
    """
    y = np.asarray(y, dtype=float).ravel()
    f0 = np.asarray(f0, dtype=float).ravel()
    if f0.shape != y.shape:
        raise DimensionMismatch(f"f0 shape {f0.shape} does not match y shape {y.shape}")
    scale = float(np.sqrt(np.mean(y**2))) or 1.0
    centered = False
    try:
        M = orthogonal_complement_basis(f0, scale=scale)
    except ZeroInitialization:
        M = centering_basis(y.size)
        centered = True
    stat, mu = score_statistic(y, f0, H, M=M)
    n = y.size
    w = mu - stat / (n - 1)
    ref = float(np.max(np.abs(mu))) if mu.size else 0.0
    w = np.where(np.abs(w) <= STAT_WEIGHT_REL * ref, 0.0, w)
    if not np.any(w):
        # flat projected spectrum: the statistic is pinned and P(0 >= 0) = 1
        return ScoreTestResult(stat, 1.0, mu, "degenerate", 0.0, centered)
    p, err, method = _pvalue_with_method(w, tol)
    return ScoreTestResult(stat, p, mu, method, err, centered)
