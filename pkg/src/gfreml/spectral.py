"""Eigendecomposition of a PSD training operator and actions in its eigenbasis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecompositionFailure, DimensionMismatch, NegativeTime, NonSymmetric, NotPSD

DEFAULT_CLAMP_REL_TOL = 1e-12
SYMMETRY_REL_TOL = 1e-8


@dataclass(frozen=True)
class SpectralOperator:
    """Eigenpairs of a symmetric PSD matrix, eigenvalues sorted descending.

    Eigenvalues whose magnitude falls below ``clamp_rel_tol * lambda_1`` are
    stored as exact zeros and excluded from ``rank``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    clamp_rel_tol: float = DEFAULT_CLAMP_REL_TOL

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def positive(self) -> np.ndarray:
        """Boolean mask of eigenvalues that survived the clamp."""
        return self.eigenvalues > 0.0

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.positive))

    @property
    def mean_eigenvalue(self) -> float:
        return float(np.mean(self.eigenvalues))

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def eigendecompose(H, clamp_rel_tol: float = DEFAULT_CLAMP_REL_TOL) -> SpectralOperator:
    """Symmetric eigendecomposition with clamping and a deterministic sign convention.

    Raises ``NonSymmetric`` when ``max|H - H^T| > 1e-8 * max|H|`` and ``NotPSD``
    when an eigenvalue is below ``-clamp_rel_tol * |lambda_1|``.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {H.shape}")
    scale = float(np.max(np.abs(H))) if H.size else 0.0
    asym = float(np.max(np.abs(H - H.T)))
    if asym > SYMMETRY_REL_TOL * max(scale, np.finfo(float).tiny):
        raise NonSymmetric(f"asymmetry {asym:.3e} exceeds tolerance (scale {scale:.3e})")
    if not np.all(np.isfinite(H)):
        raise DecompositionFailure("matrix contains non-finite entries")

    try:
        w, V = np.linalg.eigh(0.5 * (H + H.T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure is rare
        raise DecompositionFailure(str(exc)) from exc

    order = np.argsort(-w, kind="stable")
    w = w[order]
    V = V[:, order]

    top = abs(w[0]) if w.size else 0.0
    clamp = clamp_rel_tol * top
    if w[-1] < -clamp:
        raise NotPSD(f"eigenvalue {w[-1]:.3e} below -{clamp:.3e}")
    w = np.where(np.abs(w) < clamp, 0.0, w)
    w = np.maximum(w, 0.0)
    if top == 0.0:
        w = np.zeros_like(w)

    # largest-magnitude entry of each eigenvector made positive
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    V = V * signs

    w.setflags(write=False)
    V.setflags(write=False)
    return SpectralOperator(eigenvalues=w, eigenvectors=V, clamp_rel_tol=clamp_rel_tol)


def _check_vector(op: SpectralOperator, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (op.n,):
        raise DimensionMismatch(f"expected vector of length {op.n}, got shape {r.shape}")
    return r


def _check_time(t: float) -> float:
    t = float(t)
    if not t >= 0.0:
        raise NegativeTime(f"training time must be nonnegative, got {t}")
    return t


def project(op: SpectralOperator, r) -> np.ndarray:
    """Coefficients ``c_k = v_k^T r``."""
    r = _check_vector(op, r)
    return op.eigenvectors.T @ r


def decay_action(op: SpectralOperator, t: float, r) -> np.ndarray:
    """``exp(-tH) r``."""
    r = _check_vector(op, r)
    t = _check_time(t)
    if t == 0.0:
        return r.copy()
    V = op.eigenvectors
    return V @ (np.exp(-t * op.eigenvalues) * (V.T @ r))


def flow_filter(eigenvalues: np.ndarray, t: float) -> np.ndarray:
    """``(1 - exp(-t lam)) / lam`` with zero for clamped eigenvalues."""
    lam = np.asarray(eigenvalues, dtype=float)
    g = np.zeros_like(lam)
    pos = lam > 0.0
    g[pos] = -np.expm1(-t * lam[pos]) / lam[pos]
    return g


def pinv_flow_weights(op: SpectralOperator, t: float, r) -> np.ndarray:
    """``H^+ (I - exp(-tH)) r``; clamped directions contribute exactly zero."""
    r = _check_vector(op, r)
    t = _check_time(t)
    V = op.eigenvectors
    return V @ (flow_filter(op.eigenvalues, t) * (V.T @ r))
