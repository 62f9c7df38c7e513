"""Seeded Monte Carlo experiments: score-test calibration/power and early stopping.

Every replication is a pure function of ``(config, base_seed + rep)``.
Replications run through :func:`parallel_map`, which preserves order and pins
BLAS to one thread so serial and parallel runs give bit-identical numbers.
Wall-clock times are kept off the JSON report (they are never reproducible)
and written to a separate timing file instead.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from threadpoolctl import threadpool_limits

from .. import mlp, reml
from ..errors import DataError
from ..kernels import gram_ntk_empirical
from ..spectral import eigendecompose, pinv_flow_weights, project
from ..vctest import score_test
from .data import SCENARIOS, SimScenario, generate
from .risk import oracle_risk, t_opt

THREADS_ENV = "GFREML_THREADS"


# ---------------------------------------------------------------------------
# Parallel map
# ---------------------------------------------------------------------------
def resolve_workers(workers: int | None = None) -> int:
    """Worker count: the request (serial by default), capped by ``GFREML_THREADS``."""
    env = os.environ.get(THREADS_ENV)
    cap = None
    if env:
        try:
            cap = max(1, int(env))
        except ValueError as exc:
            raise DataError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    w = 1 if workers is None else max(1, int(workers))
    if workers is None and cap is not None:
        w = cap
    return min(w, cap) if cap is not None else w


def parallel_map(fn: Callable, items: Iterable, workers: int | None = None) -> list:
    items = list(items)
    w = resolve_workers(workers)
    with threadpool_limits(limits=1):
        if w <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=w) as pool:
            return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------
def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    records: list[dict]
    aggregates: dict
    timings: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return _jsonable({
            "kind": self.kind,
            "config": self.config,
            "records": self.records,
            "aggregates": self.aggregates,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, path) -> Path:
        """Write the report and a ``<stem>.timing.json`` file with wall times."""
        path = Path(path)
        try:
            path.write_text(self.to_json())
            timing = path.with_name(path.stem + ".timing.json")
            timing.write_text(json.dumps({"wall_seconds": self.timings, "total": float(sum(self.timings))}, indent=2))
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc}") from exc
        return path


def _timed(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start


# ---------------------------------------------------------------------------
# Score-test experiment
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ScoreTestConfig:
    n_grid: tuple[int, ...] = (100, 200, 300, 400, 500)
    reps: int = 1000
    alpha: float = 0.05
    base_seed: int = 0
    width: int = 500
    d: int = 10
    noise_sd: float = 0.5
    scenarios: tuple[str, ...] = ("test_null", "test_alt")
    readout_scale: float = 1.0

    def __post_init__(self):
        if self.reps < 1:
            raise DataError("reps must be >= 1")
        if not 0 < self.alpha < 1:
            raise DataError("alpha must lie in (0, 1)")
        for s in self.scenarios:
            if s not in ("test_null", "test_alt"):
                raise DataError(f"score-test experiment supports test_null/test_alt, got {s!r}")


def _test_rep(cfg: ScoreTestConfig, task):
    scenario, n, rep = task
    seed = cfg.base_seed + rep
    sid = SCENARIOS.index(scenario)
    ds = generate(SimScenario(scenario, n_train=n, n_test=0, d=cfg.d, noise_sd=cfg.noise_sd), seed=[seed, n, sid, 0])
    net = mlp.init_network([cfg.d, cfg.width, 1], seed=[seed, n, sid, 1], readout_scale=cfg.readout_scale)
    f0 = mlp.forward(net, ds.X_train)
    H = gram_ntk_empirical(ds.X_train, net).H
    res = score_test(ds.y_train, f0, H)
    return {
        "scenario": scenario,
        "n": n,
        "rep": rep,
        "seed": seed,
        "statistic": res.statistic,
        "p_value": res.p_value,
        "reject": bool(res.p_value < cfg.alpha),
        "method": res.method,
        "centered_basis": res.centered_basis,
    }


def aggregate_test_records(records: list[dict], alpha: float) -> dict:
    groups: dict[str, list[dict]] = {}
    for r in records:
        groups.setdefault(f"{r['scenario']}/n={r['n']}", []).append(r)
    out = {}
    for key in sorted(groups):
        g = groups[key]
        k = len(g)
        rate = sum(r["p_value"] < alpha for r in g) / k
        out[key] = {
            "reps": k,
            "rejection_rate": rate,
            "binomial_se": math.sqrt(rate * (1.0 - rate) / k),
            "mean_p_value": float(np.mean([r["p_value"] for r in g])),
        }
    return out


def run_test_experiment(
    n_grid=(100, 200, 300, 400, 500),
    reps: int = 1000,
    alpha: float = 0.05,
    base_seed: int = 0,
    workers: int | None = None,
    **kwargs,
) -> ExperimentReport:
    cfg = ScoreTestConfig(
        n_grid=tuple(int(n) for n in n_grid), reps=int(reps), alpha=float(alpha), base_seed=int(base_seed), **kwargs
    )
    tasks = [(s, n, rep) for s in cfg.scenarios for n in cfg.n_grid for rep in range(cfg.reps)]
    out = parallel_map(lambda task: _timed(_test_rep, cfg, task), tasks, workers)
    records = [r for r, _ in out]
    return ExperimentReport(
        kind="score_test",
        config=asdict(cfg),
        records=records,
        aggregates=aggregate_test_records(records, cfg.alpha),
        timings=[t for _, t in out],
    )


# ---------------------------------------------------------------------------
# Early-stopping experiment
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class EarlyStopConfig:
    scenario: str = "case1"
    n_train: int = 500
    n_test: int = 100
    d: int = 10
    noise_sd: float = 0.5
    width: int = 256
    depth: int = 2
    learning_rate: float | str = "auto"
    epochs: int = 200
    reps: int = 1
    base_seed: int = 0
    readout_scale: float = 0.1
    validation: bool = True
    esc_points: int = 21
    record_trajectories: bool = True

    def __post_init__(self):
        SimScenario(self.scenario, self.n_train, self.n_test, self.d, self.noise_sd)
        if self.reps < 1 or self.epochs < 0 or self.width < 1 or self.depth < 1:
            raise DataError("reps >= 1, epochs >= 0, width >= 1 and depth >= 1 are required")
        if self.n_test < 1:
            raise DataError("the early-stopping experiment needs n_test >= 1")
        if isinstance(self.learning_rate, str):
            if self.learning_rate != "auto":
                raise DataError(f"learning_rate must be a positive number or 'auto', got {self.learning_rate!r}")
        elif not self.learning_rate > 0:
            raise DataError(f"learning_rate must be positive, got {self.learning_rate}")


def _mse(a, b) -> float:
    return float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))


def _earlystop_rep(cfg: EarlyStopConfig, rep: int) -> dict:
    seed = cfg.base_seed + rep
    ds = generate(SimScenario(cfg.scenario, cfg.n_train, cfg.n_test, cfg.d, cfg.noise_sd), seed=[seed, 0])
    widths = [cfg.d] + [cfg.width] * cfg.depth + [1]
    net = mlp.init_network(widths, seed=[seed, 1], readout_scale=cfg.readout_scale)
    f0_train = mlp.forward(net, ds.X_train)
    f0_test = mlp.forward(net, ds.X_test)

    gram = gram_ntk_empirical(ds.X_train, net)
    op = eigendecompose(gram.H)
    lam = op.eigenvalues
    r0 = ds.y_train - f0_train
    c = project(op, r0)
    fit = reml.solve_stopping_time(c, lam)
    eta = 1.0 / float(lam[0]) if cfg.learning_rate == "auto" else float(cfg.learning_rate)
    stop_epoch = int(min(max(round(fit.t_hat / eta), 0), cfg.epochs))

    sigma2 = cfg.noise_sd**2
    risk = oracle_risk(op, ds.f_train, f0_train, sigma2)
    t_best, risk_min = t_opt(risk)

    K_test = gram.cross_matrix(ds.X_test)
    flow_test = f0_test + K_test @ pinv_flow_weights(op, fit.t_hat, r0)

    trace = mlp.train_full_batch(net.copy(), ds.X_train, ds.y_train, eta, cfg.epochs, ds.X_test, ds.y_test)
    test_traj = trace.test_mse
    oracle_epoch = int(np.argmin(test_traj))

    record = {
        "rep": rep,
        "seed": seed,
        "t_hat": fit.t_hat,
        "status": fit.status,
        "sigma2_hat": fit.sigma2_hat,
        "condition_i": fit.condition_i,
        "condition_ii": fit.condition_ii,
        "learning_rate": eta,
        "stop_epoch": stop_epoch,
        "edf_t_hat": fit.edf,
        "edf_stop_epoch": reml.edf(lam, eta * stop_epoch),
        "lambda_max": float(lam[0]),
        "lambda_mean": op.mean_eigenvalue,
        "t_opt": t_best,
        "risk_at_t_hat": risk(fit.t_hat),
        "risk_min": risk_min,
        "risk_ratio": risk(fit.t_hat) / risk_min,
        "risk_ratio_half_time": risk(0.5 * fit.t_hat) / risk_min,
        "flow_test_mse_at_t_hat": _mse(flow_test, ds.y_test),
        "reml_test_mse": float(test_traj[stop_epoch]),
        "oracle_epoch": oracle_epoch,
        "oracle_min_test_mse": float(test_traj[oracle_epoch]),
        "initial_test_mse": float(test_traj[0]),
    }

    t_ref = fit.t_hat if fit.t_hat > 0 else 1.0 / op.mean_eigenvalue
    esc_grid = np.geomspace(t_ref / 100.0, t_ref * 100.0, cfg.esc_points)
    record["esc_t"] = esc_grid
    record["esc"] = reml.esc_curve(c, lam, esc_grid)

    if cfg.validation:
        perm = np.random.default_rng([seed, 2]).permutation(cfg.n_train)
        n_fit = int(round(2 * cfg.n_train / 3))
        fit_idx, val_idx = np.sort(perm[:n_fit]), np.sort(perm[n_fit:])
        vtrace = mlp.train_full_batch(
            net.copy(),
            ds.X_train[fit_idx],
            ds.y_train[fit_idx],
            eta,
            cfg.epochs,
            ds.X_train[val_idx],
            ds.y_train[val_idx],
            monitor=[(ds.X_test, ds.y_test)],
        )
        val_epoch = int(np.argmin(vtrace.test_mse))
        record["validation_epoch"] = val_epoch
        record["validation_test_mse"] = float(vtrace.monitor_mse[0, val_epoch])
    if cfg.record_trajectories:
        record["train_mse_trajectory"] = trace.train_mse
        record["test_mse_trajectory"] = test_traj
    return record


_EARLYSTOP_MEANS = (
    "risk_ratio",
    "risk_ratio_half_time",
    "t_hat",
    "t_opt",
    "edf_t_hat",
    "stop_epoch",
    "reml_test_mse",
    "oracle_min_test_mse",
    "flow_test_mse_at_t_hat",
    "validation_test_mse",
)


def aggregate_earlystop_records(records: list[dict]) -> dict:
    out: dict = {"reps": len(records)}
    for key in _EARLYSTOP_MEANS:
        vals = [r[key] for r in records if key in r]
        if vals:
            out[f"mean_{key}"] = float(np.mean(vals))
    ratios = [r["reml_test_mse"] / r["oracle_min_test_mse"] for r in records if r["oracle_min_test_mse"] > 0]
    if ratios:
        out["mean_test_mse_ratio"] = float(np.mean(ratios))
    return out


def run_earlystop_experiment(
    scenario: str = "case1",
    width: int = 256,
    depth: int = 2,
    learning_rate: float | str = "auto",
    epochs: int = 200,
    base_seed: int = 0,
    workers: int | None = None,
    **kwargs,
) -> ExperimentReport:
    cfg = EarlyStopConfig(
        scenario=scenario,
        width=int(width),
        depth=int(depth),
        learning_rate=learning_rate,
        epochs=int(epochs),
        base_seed=int(base_seed),
        **kwargs,
    )
    out = parallel_map(lambda rep: _timed(_earlystop_rep, cfg, rep), range(cfg.reps), workers)
    records = [r for r, _ in out]
    return ExperimentReport(
        kind="early_stopping",
        config=asdict(cfg),
        records=records,
        aggregates=aggregate_earlystop_records(records),
        timings=[t for _, t in out],
    )
