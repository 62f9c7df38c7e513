"""Training operators ``H`` and their cross-operator rows ``h(x, X)``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from . import mlp
from .errors import DataError, DimensionMismatch, ZeroNormInput

KernelKind = Literal["linear", "rbf", "ntk_analytic", "ntk_empirical"]


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind
    depth: int | None = None
    bandwidth: float | None = None
    network: mlp.MlpNetwork | None = None

    def __post_init__(self):
        needs_depth = self.kind == "ntk_analytic"
        if self.kind not in ("linear", "rbf", "ntk_analytic", "ntk_empirical"):
            raise DataError(f"unknown kernel kind {self.kind!r}")
        if (self.bandwidth is not None) != (self.kind == "rbf"):
            raise DataError("bandwidth is required for, and only for, the rbf kernel")
        if needs_depth and (self.depth is None or self.depth < 1):
            raise DataError("ntk_analytic requires depth >= 1")
        if (self.network is not None) != (self.kind == "ntk_empirical"):
            raise DataError("a network is required for, and only for, ntk_empirical")


@dataclass(frozen=True)
class GramResult:
    H: np.ndarray
    cross: Callable[[np.ndarray], np.ndarray]

    def cross_matrix(self, X_new) -> np.ndarray:
        """Rows ``h(x, X)`` stacked for every row of ``X_new``."""
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        return np.vstack([self.cross(x) for x in X_new])


def _as_design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DimensionMismatch(f"expected an n x d design with n, d >= 1, got shape {X.shape}")
    return X


def _as_point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (d,):
        raise DimensionMismatch(f"expected an input of dimension {d}, got shape {x.shape}")
    return x


def _symmetrize(H: np.ndarray) -> np.ndarray:
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# Linear and RBF
# ---------------------------------------------------------------------------
def gram_linear(X) -> GramResult:
    X = _as_design(X)
    H = X @ X.T
    d = X.shape[1]
    return GramResult(H=_symmetrize(H), cross=lambda x: X @ _as_point(x, d))


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    sq = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(sq, 0.0)


def gram_rbf(X, bandwidth: float) -> GramResult:
    X = _as_design(X)
    if not bandwidth > 0:
        raise DataError(f"bandwidth must be positive, got {bandwidth}")
    scale = 2.0 * bandwidth**2
    H = np.exp(-_sq_dists(X, X) / scale)
    H = _symmetrize(H)
    np.fill_diagonal(H, 1.0)
    d = X.shape[1]

    def cross(x):
        x = _as_point(x, d)
        return np.exp(-np.sum((X - x) ** 2, axis=1) / scale)

    return GramResult(H=H, cross=cross)


# ---------------------------------------------------------------------------
# Infinite-width ReLU NTK
# ---------------------------------------------------------------------------
def ntk_relu_recursion(gram: np.ndarray, diag_left: np.ndarray, diag_right: np.ndarray, depth: int) -> np.ndarray:
    """Depth-``depth`` ReLU NTK from the input-level covariances.

    ``gram[i, j] = Sigma0(x_i, x'_j)``; the diagonals hold ``Sigma0(x_i, x_i)``
    and ``Sigma0(x'_j, x'_j)``.  With the ReLU normalisation ``c_sigma = 2`` the
    diagonals are preserved across layers, so only the off-diagonal
    covariance evolves.
    """
    norm = np.sqrt(np.outer(diag_left, diag_right))
    sigma = gram
    theta = gram
    for _ in range(depth):
        rho = np.clip(sigma / norm, -1.0, 1.0)
        angle = np.arccos(rho)
        sigma_dot = (np.pi - angle) / np.pi
        sigma = norm * (np.sin(angle) + (np.pi - angle) * rho) / np.pi
        theta = theta * sigma_dot + sigma
    return theta


def gram_ntk_analytic(X, depth: int) -> GramResult:
    """ReLU NTK Gram matrix with ``Sigma0(x, x') = x^T x' / d`` and no bias terms."""
    X = _as_design(X)
    depth = int(depth)
    if depth < 1:
        raise DataError(f"depth must be >= 1, got {depth}")
    n, d = X.shape
    diag = np.sum(X**2, axis=1) / d
    if np.any(diag <= 0.0):
        raise ZeroNormInput(f"rows {np.flatnonzero(diag <= 0.0).tolist()} have zero norm")
    H = ntk_relu_recursion(X @ X.T / d, diag, diag, depth)
    H = _symmetrize(H)

    def cross(x):
        x = _as_point(x, d)
        dx = float(x @ x) / d
        if dx <= 0.0:
            raise ZeroNormInput("cross-operator input has zero norm")
        return ntk_relu_recursion((X @ x / d)[:, None], diag, np.array([dx]), depth)[:, 0]

    return GramResult(H=H, cross=cross)


# ---------------------------------------------------------------------------
# Empirical NTK of a finite network
# ---------------------------------------------------------------------------
def gram_ntk_empirical(X, net: mlp.MlpNetwork) -> GramResult:
    """``H_ij = <grad f(x_i), grad f(x_j)>`` at the network's current weights.

    Assembled layer by layer as ``(D D^T) * (A A^T + 1)`` so the Jacobian is
    never materialised, then symmetrised exactly.
    """
    X = _as_design(X)
    d = net.layer_widths[0]
    if X.shape[1] != d:
        raise DimensionMismatch(f"network expects dimension {d}, got {X.shape[1]}")
    factors = mlp.ntk_factors(net, X)
    H = _symmetrize(mlp.ntk_from_factors(net, factors, factors))

    def cross(x):
        x = _as_point(x, d)
        return mlp.ntk_from_factors(net, factors, mlp.ntk_factors(net, x[None, :]))[:, 0]

    return GramResult(H=H, cross=cross)


def build_gram(X, spec: KernelSpec) -> GramResult:
    if spec.kind == "linear":
        return gram_linear(X)
    if spec.kind == "rbf":
        return gram_rbf(X, spec.bandwidth)
    if spec.kind == "ntk_analytic":
        return gram_ntk_analytic(X, spec.depth)
    return gram_ntk_empirical(X, spec.network)
