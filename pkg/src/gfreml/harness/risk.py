"""Closed-form in-sample prediction risk of the flow when the truth is known."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from ..errors import DimensionMismatch
from ..spectral import SpectralOperator, _check_time, project


@dataclass(frozen=True)
class OracleRisk:
    """``E(t) = n^-1 sum_k [b_k^2 e^{-2 t lam_k} + s2 (1 - e^{-t lam_k})^2] + s2``."""

    b_coeffs: np.ndarray
    eigenvalues: np.ndarray
    sigma2: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)[:, None]
        if np.any(tt < 0):
            raise ValueError("risk is defined for t >= 0")
        decay = np.exp(-tt * self.eigenvalues)
        vals = np.mean(self.b_coeffs**2 * decay**2 + self.sigma2 * np.expm1(-tt * self.eigenvalues) ** 2, axis=1)
        vals = vals + self.sigma2
        return float(vals[0]) if scalar else vals

    def risk_fn(self, t: float) -> float:
        return float(self(_check_time(t)))


def oracle_risk(op: SpectralOperator, f_star_train, f0_train, sigma2: float) -> OracleRisk:
    f_star_train = np.asarray(f_star_train, dtype=float)
    f0_train = np.asarray(f0_train, dtype=float)
    if f_star_train.shape != f0_train.shape:
        raise DimensionMismatch("f_star and f0 must have the same length")
    b = project(op, f_star_train - f0_train)
    return OracleRisk(b_coeffs=b, eigenvalues=np.asarray(op.eigenvalues), sigma2=float(sigma2))


def t_opt(risk: OracleRisk, points: int = 2001, span: float = 1e5) -> tuple[float, float]:
    """Minimiser of the risk over ``{0}`` and a log grid around ``1/lam_bar``, refined locally."""
    lam_bar = float(np.mean(risk.eigenvalues))
    if lam_bar <= 0:
        return 0.0, risk(0.0)
    grid = np.concatenate([[0.0], np.geomspace(1.0 / (span * lam_bar), span / lam_bar, points)])
    vals = risk(grid)
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    best_t, best_v = float(grid[i]), float(vals[i])
    if hi > lo:
        res = minimize_scalar(risk, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * max(hi, 1e-300)})
        if res.fun < best_v:
            best_t, best_v = float(res.x), float(res.fun)
    return best_t, best_v
