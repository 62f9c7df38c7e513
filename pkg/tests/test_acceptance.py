"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import json
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import kstest

from gfreml import cli, flow, mlp, reml, vctest
from gfreml.harness.experiments import run_earlystop_experiment, run_test_experiment
from gfreml.kernels import gram_linear
from gfreml.spectral import eigendecompose

from conftest import random_psd, record_acceptance
from test_mlp import fd_gradient, gd_flow_deviation


def test_criterion_01_blup_equivalence():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 31))
        rank = int(rng.integers(1, n + 1))
        op = eigendecompose(random_psd(rng, n, rank=rank))
        m = flow.build(op, rng.standard_normal(n), rng.standard_normal(n))
        for mult in (0.01, 0.1, 1.0, 10.0):
            t = mult / op.mean_eigenvalue
            worst = max(worst, float(np.max(np.abs(m.f0_train + flow.blup(m, t) - flow.fit_in_sample(m, t)))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 5.0
    record_acceptance(1, ok, f"BLUP vs flow max abs diff {worst:.2e} (< 1e-10), {elapsed:.2f}s (< 5s)")
    assert ok


def _grid_argmin_q(c: np.ndarray, lam: np.ndarray, points: int = 1_000_000, chunk: int = 2000) -> float:
    """Argmin of Q on a log grid spanning 1e-4..1e4 times 1/lam_bar, evaluated in blocks."""
    n = c.size
    grid = np.geomspace(1e-4, 1e4, points) / lam.mean()
    c2 = c**2
    lam_min = lam.min()
    shifted = lam - lam_min
    best_val, best_t = np.inf, np.nan
    for i in range(0, points, chunk):
        t = grid[i : i + chunk]
        # log sum c^2 e^{-t lam} = -t lam_min + log sum c^2 e^{-t (lam - lam_min)}
        s = np.exp(-np.outer(t, shifted)) @ c2
        q = n * (np.log(s) - t * lam_min) + t * lam.sum()
        j = int(np.argmin(q))
        if q[j] < best_val:
            best_val, best_t = q[j], t[j]
    return float(best_t)


def test_criterion_02_reml_solver_vs_grid():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst_t = worst_psi = 0.0
    convex = True
    for _ in range(50):
        n = 50
        lam = np.sort(rng.exponential(size=n) / np.arange(1, n + 1))[::-1] * rng.uniform(0.5, 5.0)
        c = np.sqrt(lam) * rng.standard_normal(n) * 3.0 + 0.5 * rng.standard_normal(n)
        fit = reml.solve_stopping_time(c, lam)
        assert fit.status == "interior_root"
        t_grid = _grid_argmin_q(c, lam)
        worst_t = max(worst_t, abs(fit.t_hat - t_grid) / fit.t_hat)
        J = reml.spectral_losses(c, lam, fit.t_hat)
        worst_psi = max(worst_psi, abs(reml.psi(c, lam, fit.t_hat)) * n / J.sum())
        for t in np.geomspace(1e-3, 1e3, 100) / lam.mean():
            convex &= reml.q_derivatives(c, lam, t)[1] >= 0.0
    elapsed = time.perf_counter() - start
    ok = worst_t < 1e-4 and worst_psi < 1e-8 and convex and elapsed < 30.0
    record_acceptance(
        2,
        ok,
        f"max rel |t_hat - grid argmin| {worst_t:.2e} (< 1e-4), max |psi| n/sum J {worst_psi:.2e} (< 1e-8), "
        f"Q'' >= 0: {convex}, {elapsed:.1f}s (< 30s)",
    )
    assert ok


def test_criterion_03_closed_form_reml():
    fit = reml.solve_stopping_time([2.0, 1.0], [2.0, 0.0])
    dt = abs(fit.t_hat - np.log(2.0))
    ds = abs(fit.sigma2_hat - 1.0)
    ok = dt < 1e-10 and ds < 1e-12
    record_acceptance(3, ok, f"|t_hat - ln 2| = {dt:.1e} (< 1e-10), |sigma2_hat - 1| = {ds:.1e} (< 1e-12)")
    assert ok


def test_criterion_04_score_test_calibration():
    start = time.perf_counter()
    smoke = run_test_experiment(n_grid=(200,), reps=200, base_seed=0, scenarios=("test_null",))
    smoke_time = time.perf_counter() - start
    smoke_rate = smoke.aggregates["test_null/n=200"]["rejection_rate"]

    start = time.perf_counter()
    full = run_test_experiment(n_grid=(200,), reps=1000, base_seed=0, scenarios=("test_null",))
    full_time = time.perf_counter() - start
    rate = full.aggregates["test_null/n=200"]["rejection_rate"]
    methods = sorted({r["method"] for r in full.records})

    ok_smoke = 0.01 <= smoke_rate <= 0.10 and smoke_time < 180.0
    ok_full = 0.03 <= rate <= 0.07 and full_time < 900.0
    ok = ok_smoke and ok_full
    record_acceptance(
        4,
        ok,
        f"type I error {rate:.3f} over 1000 reps in [0.03, 0.07] ({full_time:.0f}s < 900s); "
        f"smoke {smoke_rate:.3f} over 200 reps in [0.01, 0.10] ({smoke_time:.0f}s < 180s); methods {methods}",
    )
    assert ok


def test_criterion_05_power():
    rep = run_test_experiment(n_grid=(500,), reps=200, base_seed=0, scenarios=("test_alt",))
    power = rep.aggregates["test_alt/n=500"]["rejection_rate"]
    ok = power >= 0.95
    record_acceptance(5, ok, f"power {power:.3f} over 200 reps at n=500 (>= 0.95)")
    assert ok


def test_criterion_06_imhof_vs_monte_carlo():
    rng = np.random.default_rng(606)
    start = time.perf_counter()
    worst_excess = -np.inf
    worst_line = ""
    for i in range(20):
        m = int(rng.integers(2, 7))
        mags = 10.0 ** rng.uniform(-3.0, 3.0, m)
        signs = rng.choice([-1.0, 1.0], m)
        signs[0], signs[1] = 1.0, -1.0
        w = mags * signs
        p, _ = vctest.pvalue_weighted_chisq(w)
        p_mc, se = vctest.pvalue_weighted_chisq_mc(w, n_samples=10_000_000, seed=i)
        tol = max(1e-3, 3.0 * se)
        excess = abs(p - p_mc) - tol
        if excess > worst_excess:
            worst_excess = excess
            worst_line = f"|p - p_mc| = {abs(p - p_mc):.2e} vs tol {tol:.2e}"
    elapsed = time.perf_counter() - start
    ok = worst_excess < 0.0 and elapsed < 120.0
    record_acceptance(6, ok, f"20 weight vectors, worst case {worst_line}, {elapsed:.0f}s (< 120s)")
    assert ok


def test_criterion_07_null_uniformity():
    rng = np.random.default_rng(707)
    n, d = 100, 10
    X = rng.standard_normal((n, d))
    H = gram_linear(X).H
    f0 = X @ rng.standard_normal(d)
    ps = np.array([vctest.score_test(rng.standard_normal(n), f0, H).p_value for _ in range(2000)])
    ks = kstest(ps, "uniform").statistic
    ok = ks < 0.05
    record_acceptance(7, ok, f"KS distance of 2000 null p-values {ks:.4f} (< 0.05)")
    assert ok


def test_criterion_08_risk_optimality():
    common = dict(scenario="case1", n_train=500, width=256, epochs=0, reps=20, base_seed=0, validation=False,
                  record_trajectories=False)
    rep = run_earlystop_experiment(**common)
    ratio = rep.aggregates["mean_risk_ratio"]
    half = rep.aggregates["mean_risk_ratio_half_time"]
    unit = run_earlystop_experiment(readout_scale=1.0, **common).aggregates["mean_risk_ratio"]
    statuses = sorted({r["status"] for r in rep.records})
    ok = ratio <= 1.10
    record_acceptance(
        8,
        ok,
        f"mean risk(t_hat)/min risk {ratio:.4f} (<= 1.10) over 20 case1 reps, readout scale 0.1; "
        f"diagnostics: unit readout scale {unit:.4f}, risk(t_hat/2) ratio {half:.4f}; statuses {statuses}",
    )
    assert ok


def test_criterion_09_gd_flow_consistency():
    e1, e2 = gd_flow_deviation(1e-2), gd_flow_deviation(5e-3)
    ratio = e1 / e2
    ok = 1.6 <= ratio <= 2.4
    record_acceptance(9, ok, f"deviation {e1:.3e} at eta=1e-2, {e2:.3e} at eta=5e-3, ratio {ratio:.3f} in [1.6, 2.4]")
    assert ok


def test_criterion_10_gradient_finite_differences():
    rng = np.random.default_rng(1010)
    worst = 0.0
    for k in range(10):
        depth = int(rng.integers(1, 4))
        widths = [int(rng.integers(2, 6))] + [int(rng.integers(3, 10)) for _ in range(depth)] + [1]
        net = mlp.init_network(widths, seed=k)
        net.biases = [0.1 * rng.standard_normal(b.shape) for b in net.biases]
        x = rng.standard_normal(widths[0])
        g = mlp.grad_params(net, x)
        fd = fd_gradient(net, x)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6))))
    ok = worst < 1e-5
    record_acceptance(10, ok, f"max relative error vs central differences {worst:.2e} over 10 nets (< 1e-5)")
    assert ok


def test_criterion_11_simulate_determinism(tmp_path):
    cfg = tmp_path / "sim.ini"
    cfg.write_text("[experiment]\nn_grid = 40, 60\nreps = 6\nwidth = 32\nbase_seed = 11\n")
    outs = []
    for i, workers in enumerate(("1", "1", "4")):
        out = tmp_path / f"r{i}.json"
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--workers", workers]) == 0
        outs.append(out.read_bytes())
    out = tmp_path / "sub.json"
    proc = subprocess.run(
        [sys.executable, "-m", "gfreml.cli", "simulate", "--config", str(cfg), "--out", str(out), "--workers", "4"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    outs.append(out.read_bytes())
    ok = all(o == outs[0] for o in outs) and len(json.loads(outs[0])["records"]) == 24
    record_acceptance(11, ok, "simulate reports byte-identical across 2 serial, 1 threaded and 1 subprocess run")
    assert ok
