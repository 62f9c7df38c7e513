"""Fixed-operator gradient flow and its random-effects (BLUP) counterpart.

Every matrix function of ``H`` is applied in the eigenbasis held by the
:class:`~gfreml.spectral.SpectralOperator`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, MissingCrossOperator
from .spectral import SpectralOperator, _check_time, pinv_flow_weights, project

# exp() overflows float64 a little above 709
_OVERFLOW_EXPONENT = 700.0


@dataclass(frozen=True)
class FlowModel:
    op: SpectralOperator
    f0_train: np.ndarray
    residual: np.ndarray
    coeffs: np.ndarray
    cross: Callable[[np.ndarray], np.ndarray] | None = None
    f0_fn: Callable[[np.ndarray], float] | None = None

    @property
    def n(self) -> int:
        return self.op.n


@dataclass(frozen=True)
class VarianceAllocation:
    t: float
    gamma_t: float
    sigma2_eps_t: float
    noise_trace: float
    signal_trace: float
    explained_proportion: float


def build(op: SpectralOperator, f0_train, y, cross=None, f0_fn=None) -> FlowModel:
    f0_train = np.asarray(f0_train, dtype=float)
    y = np.asarray(y, dtype=float)
    if f0_train.shape != (op.n,) or y.shape != (op.n,):
        raise DimensionMismatch(
            f"operator has n={op.n} but f0 has shape {f0_train.shape} and y has shape {y.shape}"
        )
    residual = y - f0_train
    return FlowModel(
        op=op,
        f0_train=f0_train,
        residual=residual,
        coeffs=project(op, residual),
        cross=cross,
        f0_fn=f0_fn,
    )


def fit_in_sample(m: FlowModel, t: float) -> np.ndarray:
    """``f0(X) + (I - exp(-tH)) r0``."""
    t = _check_time(t)
    if t == 0.0:
        return m.f0_train.copy()
    shrink = -np.expm1(-t * m.op.eigenvalues)
    return m.f0_train + m.op.eigenvectors @ (shrink * m.coeffs)


def predict(m: FlowModel, x_new, t: float) -> float:
    """Out-of-sample prediction ``f0(x) + h(x, X) H^+ (I - exp(-tH)) r0``."""
    if m.cross is None or m.f0_fn is None:
        raise MissingCrossOperator("prediction at new inputs needs both a cross-operator and f0_fn")
    weights = pinv_flow_weights(m.op, t, m.residual)
    return float(m.f0_fn(x_new)) + float(np.dot(m.cross(x_new), weights))


def predict_many(m: FlowModel, X_new, t: float) -> np.ndarray:
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if m.cross is None or m.f0_fn is None:
        raise MissingCrossOperator("prediction at new inputs needs both a cross-operator and f0_fn")
    weights = pinv_flow_weights(m.op, t, m.residual)
    return np.array([float(m.f0_fn(x)) + float(np.dot(m.cross(x), weights)) for x in X_new])


def _log_expm1(x: np.ndarray) -> np.ndarray:
    """``log(exp(x) - 1)`` for ``x >= 0``; ``-inf`` at zero."""
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, -np.inf)
    pos = x > 0.0
    xp = x[pos]
    small = xp < 30.0
    out_pos = np.empty_like(xp)
    out_pos[small] = np.log(np.expm1(xp[small]))
    out_pos[~small] = xp[~small] + np.log1p(-np.exp(-xp[~small]))
    out[pos] = out_pos
    return out


def _log_gamma(eigenvalues: np.ndarray, t: float) -> float:
    """``log(n^-1 sum exp(t lam))``."""
    return float(logsumexp(t * eigenvalues) - np.log(eigenvalues.size))


def blup(m: FlowModel, t: float) -> np.ndarray:
    """Predicted random effect ``Cov(u_t, r0) var(r0)^-1 r0``.

    The working model has ``var(u_t) = s2 (e^{tH} - I)`` and
    ``var(eps_t) = s2 I`` with ``s2 = 1/gamma_t`` (unit base variance), so the
    covariance and variance are built from their own eigenvalues and divided
    in log space, rather than reusing the flow filter.
    """
    t = _check_time(t)
    lam = m.op.eigenvalues
    log_s2 = -_log_gamma(lam, t)
    log_cov = log_s2 + _log_expm1(t * lam)
    log_var = log_s2 + t * lam
    gain = np.exp(log_cov - log_var)
    return m.op.eigenvectors @ (gain * m.coeffs)


def variance_allocation(m: FlowModel, t: float, sigma2: float) -> VarianceAllocation:
    t = _check_time(t)
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    lam = m.op.eigenvalues
    n = lam.size
    log_sum = float(logsumexp(t * lam))
    log_gamma = log_sum - np.log(n)
    sigma2_t = sigma2 * np.exp(-log_gamma)
    noise = n * sigma2_t
    if t * float(lam.max(initial=0.0)) > _OVERFLOW_EXPONENT:
        # each term of sum(exp(t lam) - 1) relative to the total
        explained = -np.expm1(np.log(n) - log_sum)
        signal = n * sigma2 * explained
        gamma_t = float(np.exp(log_gamma)) if log_gamma < 709 else float("inf")
    else:
        gamma_t = float(np.exp(log_gamma))
        signal = sigma2_t * float(np.sum(np.expm1(t * lam)))
        explained = 1.0 - n / float(np.sum(np.exp(t * lam)))
    return VarianceAllocation(
        t=t,
        gamma_t=gamma_t,
        sigma2_eps_t=float(sigma2_t),
        noise_trace=float(noise),
        signal_trace=float(signal),
        explained_proportion=float(explained),
    )


def spectral_coefficients(m: FlowModel, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Regularised coefficients ``a_k = c_k (1 - e^{-t lam_k})`` and losses ``J_k = c_k^2 e^{-t lam_k}``."""
    t = _check_time(t)
    decay = np.exp(-t * m.op.eigenvalues)
    a = -m.coeffs * np.expm1(-t * m.op.eigenvalues)
    J = m.coeffs**2 * decay
    return a, J
