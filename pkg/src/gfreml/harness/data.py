"""Simulation scenarios: Gaussian features, known regression functions, Gaussian noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError

SCENARIOS = ("test_null", "test_alt", "case1", "case2", "case3")


def _case1(X: np.ndarray) -> np.ndarray:
    x = X.T
    return (
        0.1 * x[0]
        + 0.16 * np.tanh(x[1])
        + 0.2 * np.sin(x[2])
        + 0.12 * x[3]
        + 0.06 * x[4] ** 2
        + 0.01 * np.exp(x[5])
        + 0.2 * np.cos(x[6])
        + 0.1 * np.abs(x[7])
        + 0.08 * x[8]
        + 0.14 * np.sin(x[9])
    )


def _case2(X: np.ndarray) -> np.ndarray:
    x = X.T
    return (
        0.25 * x[0]
        + 0.15 * x[1] ** 2
        + 0.1 * x[2] * x[3]
        + 0.2 * np.sin(x[4])
        + 0.15 * np.cos(x[5]) * np.sin(x[6])
        + 0.05 * x[7] * x[8] * x[9]
    )


def _case3(X: np.ndarray) -> np.ndarray:
    x = X.T
    inner = (
        np.sin(x[0] * x[1] + x[2] * x[3] * x[4])
        + np.sin(x[2] * x[3] * x[4])
        + 2.0 * (np.sin(x[5]) * np.sin(x[6]) + np.sin(x[7]) * np.sin(x[8]) * np.sin(x[9]))
    )
    return 2.0 * np.cos(inner)


def f_star(name: str, X) -> np.ndarray:
    """Ground-truth regression function of a scenario evaluated row-wise."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if name == "test_null":
        return np.zeros(X.shape[0])
    if X.shape[1] < 10:
        raise DataError(f"scenario {name!r} needs at least 10 features, got {X.shape[1]}")
    if name == "case1":
        return _case1(X)
    if name in ("case2", "test_alt"):
        return _case2(X)
    if name == "case3":
        return _case3(X)
    raise DataError(f"unknown scenario {name!r}")


@dataclass(frozen=True)
class SimScenario:
    name: str
    n_train: int = 500
    n_test: int = 100
    d: int = 10
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise DataError(f"unknown scenario {self.name!r}; expected one of {SCENARIOS}")
        if not self.noise_sd > 0:
            raise DataError(f"noise_sd must be positive, got {self.noise_sd}")
        if self.n_train < 1 or self.n_test < 0 or self.d < 1:
            raise DataError("n_train >= 1, n_test >= 0 and d >= 1 are required")
        if self.name != "test_null" and self.d < 10:
            raise DataError(f"scenario {self.name!r} needs d >= 10")


@dataclass(frozen=True)
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    f_train: np.ndarray
    f_test: np.ndarray


def generate(scenario: SimScenario, seed=None) -> Dataset:
    """Draw a dataset; ``seed`` (an int or int sequence) overrides ``scenario.seed``."""
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    n, m, d = scenario.n_train, scenario.n_test, scenario.d
    X = rng.standard_normal((n + m, d))
    f = f_star(scenario.name, X)
    y = f + scenario.noise_sd * rng.standard_normal(n + m)
    return Dataset(
        X_train=X[:n],
        y_train=y[:n],
        X_test=X[n:],
        y_test=y[n:],
        f_train=f[:n],
        f_test=f[n:],
    )
