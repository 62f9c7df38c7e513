from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm
from scipy.optimize import minimize

from gfreml import flow
from gfreml.errors import DimensionMismatch, MissingCrossOperator, NegativeTime
from gfreml.kernels import gram_linear, gram_rbf
from gfreml.spectral import eigendecompose

from conftest import random_psd


def _model(rng, n=8, rank=None, f0=None):
    op = eigendecompose(random_psd(rng, n, rank=rank))
    y = rng.standard_normal(n)
    f0 = rng.standard_normal(n) if f0 is None else f0
    return flow.build(op, f0, y), y


class TestBuild:
    def test_zero_residual(self, rng):
        op = eigendecompose(random_psd(rng, 4))
        y = rng.standard_normal(4)
        m = flow.build(op, y, y)
        np.testing.assert_array_equal(m.residual, np.zeros(4))
        np.testing.assert_array_equal(m.coeffs, np.zeros(4))

    def test_zero_init(self, rng):
        op = eigendecompose(random_psd(rng, 4))
        y = rng.standard_normal(4)
        np.testing.assert_array_equal(flow.build(op, np.zeros(4), y).residual, y)

    def test_parseval(self, rng):
        m, y = _model(rng)
        assert abs(np.linalg.norm(m.coeffs) - np.linalg.norm(m.residual)) < 1e-12 * np.linalg.norm(m.residual)

    def test_mismatch(self, rng):
        op = eigendecompose(random_psd(rng, 4))
        with pytest.raises(DimensionMismatch):
            flow.build(op, np.zeros(3), np.zeros(4))


class TestFitInSample:
    def test_time_zero(self, rng):
        m, _ = _model(rng)
        np.testing.assert_array_equal(flow.fit_in_sample(m, 0.0), m.f0_train)

    def test_interpolation_limit(self, rng):
        m, y = _model(rng)
        t = 50.0 / m.op.eigenvalues[-1]
        np.testing.assert_allclose(flow.fit_in_sample(m, t), y, atol=1e-8)

    def test_scalar(self):
        m = flow.build(eigendecompose(np.eye(1)), [0.0], [2.0])
        np.testing.assert_allclose(flow.fit_in_sample(m, np.log(2.0)), [1.0], rtol=1e-15)

    def test_matches_expm(self, rng):
        H = random_psd(rng, 6, rank=4)
        m = flow.build(eigendecompose(H), rng.standard_normal(6), rng.standard_normal(6))
        expected = m.f0_train + (np.eye(6) - expm(-0.7 * H)) @ m.residual
        np.testing.assert_allclose(flow.fit_in_sample(m, 0.7), expected, atol=1e-10)

    def test_training_error_nonincreasing(self, rng):
        m, y = _model(rng, n=12, rank=7)
        errs = [np.linalg.norm(y - flow.fit_in_sample(m, t)) for t in np.geomspace(1e-4, 1e3, 60)]
        assert np.all(np.diff(errs) <= 1e-12)

    def test_negative_time(self, rng):
        m, _ = _model(rng)
        with pytest.raises(NegativeTime):
            flow.fit_in_sample(m, -0.1)


class TestPredict:
    def test_training_points(self, rng):
        X = rng.standard_normal((7, 2))
        g = gram_rbf(X, 1.0)
        f0_fn = lambda x: float(np.sin(x[0]))  # noqa: E731
        f0 = np.array([f0_fn(x) for x in X])
        m = flow.build(eigendecompose(g.H), f0, rng.standard_normal(7), cross=g.cross, f0_fn=f0_fn)
        for t in (0.1, 2.0, 30.0):
            np.testing.assert_allclose(flow.predict_many(m, X, t), flow.fit_in_sample(m, t), atol=1e-8)
            assert flow.predict(m, X[3], t) == pytest.approx(flow.fit_in_sample(m, t)[3], abs=1e-8)

    def test_time_zero(self, rng):
        X = rng.standard_normal((5, 3))
        g = gram_linear(X)
        m = flow.build(eigendecompose(g.H), np.full(5, 0.5), rng.standard_normal(5), g.cross, lambda x: 0.5)
        assert flow.predict(m, rng.standard_normal(3), 0.0) == 0.5

    def test_one_dimensional_linear(self):
        # H = x1^2 = 4, h(x, X) = 2x; prediction = 2x (1/4)(1 - e^{-4t}) y
        g = gram_linear([[2.0]])
        m = flow.build(eigendecompose(g.H), [0.0], [3.0], g.cross, lambda x: 0.0)
        t = 0.25
        expected = 2 * 1.5 * 0.25 * (1 - np.exp(-1.0)) * 3.0
        assert flow.predict(m, np.array([1.5]), t) == pytest.approx(expected, rel=1e-14)

    def test_missing_cross(self, rng):
        m, _ = _model(rng)
        with pytest.raises(MissingCrossOperator):
            flow.predict(m, np.zeros(2), 1.0)
        with pytest.raises(MissingCrossOperator):
            flow.predict_many(m, np.zeros((2, 2)), 1.0)


class TestBlup:
    def test_time_zero(self, rng):
        m, _ = _model(rng)
        np.testing.assert_array_equal(flow.blup(m, 0.0), np.zeros(8))

    def test_scalar(self):
        m = flow.build(eigendecompose(np.eye(1)), [0.0], [2.0])
        np.testing.assert_allclose(flow.blup(m, np.log(2.0)), [1.0], rtol=1e-14)

    def test_dense_covariance_oracle(self, rng):
        # explicit matrices with an arbitrary base variance
        H = random_psd(rng, 5)
        m = flow.build(eigendecompose(H), np.zeros(5), rng.standard_normal(5))
        s2 = 0.37
        cov = s2 * (expm(0.4 * H) - np.eye(5))
        var = cov + s2 * np.eye(5)
        np.testing.assert_allclose(flow.blup(m, 0.4), cov @ np.linalg.solve(var, m.residual), atol=1e-10)

    @pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
    def test_equivalence_n10(self, rng, t):
        m, _ = _model(rng, n=10)
        np.testing.assert_allclose(m.f0_train + flow.blup(m, t), flow.fit_in_sample(m, t), atol=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(0, 2**31 - 1),
        n=st.integers(1, 30),
        log_t=st.floats(-4.0, 3.0),
        rank_frac=st.floats(0.2, 1.0),
    )
    def test_equivalence_property(self, seed, n, log_t, rank_frac):
        rng = np.random.default_rng(seed)
        m, _ = _model(rng, n=n, rank=max(1, int(rank_frac * n)))
        t = 10.0**log_t / max(m.op.mean_eigenvalue, 1e-12)
        scale = max(1.0, np.abs(m.residual).max())
        np.testing.assert_allclose(
            m.f0_train + flow.blup(m, t), flow.fit_in_sample(m, t), atol=1e-10 * scale
        )

    def test_large_time_no_overflow(self, rng):
        m, y = _model(rng, n=6)
        out = flow.blup(m, 1e4 / m.op.eigenvalues[-1])
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(m.f0_train + out, y, atol=1e-10)


class TestVarianceAllocation:
    def test_time_zero(self, rng):
        m, _ = _model(rng)
        va = flow.variance_allocation(m, 0.0, 2.0)
        assert va.explained_proportion == 0.0
        assert va.noise_trace == pytest.approx(8 * 2.0, rel=1e-15)
        assert va.signal_trace == 0.0
        assert va.gamma_t == pytest.approx(1.0)

    def test_scalar(self):
        m = flow.build(eigendecompose(np.eye(1)), [0.0], [1.0])
        va = flow.variance_allocation(m, np.log(2.0), 1.0)
        assert va.explained_proportion == pytest.approx(0.5, rel=1e-14)
        assert va.gamma_t == pytest.approx(2.0, rel=1e-14)
        assert va.sigma2_eps_t == pytest.approx(0.5, rel=1e-14)

    def test_trace_identity_and_monotone(self, rng):
        m, _ = _model(rng, n=9, rank=5)
        sigma2 = 0.8
        props = []
        for t in np.concatenate([[0.0], np.geomspace(1e-3, 1e4, 40)]):
            va = flow.variance_allocation(m, t, sigma2)
            assert va.noise_trace + va.signal_trace == pytest.approx(9 * sigma2, rel=1e-12)
            assert 0.0 <= va.explained_proportion <= 1.0
            props.append(va.explained_proportion)
        assert np.all(np.diff(props) >= -1e-15)

    def test_overflow_branch(self, rng):
        m, _ = _model(rng, n=5)
        t = 2000.0 / m.op.eigenvalues[0]
        va = flow.variance_allocation(m, t, 1.0)
        assert np.isfinite(va.explained_proportion)
        assert va.explained_proportion == pytest.approx(1.0, abs=1e-12)
        assert va.noise_trace + va.signal_trace == pytest.approx(5.0, rel=1e-12)
        # both branches agree just across the threshold
        t_lo = 699.0 / m.op.eigenvalues[0]
        t_hi = 701.0 / m.op.eigenvalues[0]
        lo = flow.variance_allocation(m, t_lo, 1.0)
        hi = flow.variance_allocation(m, t_hi, 1.0)
        assert hi.explained_proportion >= lo.explained_proportion

    def test_bad_sigma2(self, rng):
        m, _ = _model(rng)
        with pytest.raises(ValueError):
            flow.variance_allocation(m, 1.0, 0.0)


class TestSpectralCoefficients:
    def test_time_zero(self, rng):
        m, _ = _model(rng)
        a, J = flow.spectral_coefficients(m, 0.0)
        np.testing.assert_array_equal(a, np.zeros(8))
        np.testing.assert_array_equal(J, m.coeffs**2)

    def test_null_direction(self, rng):
        m, _ = _model(rng, n=6, rank=3)
        null = ~m.op.positive
        for t in (0.5, 50.0):
            a, J = flow.spectral_coefficients(m, t)
            np.testing.assert_array_equal(a[null], 0.0)
            np.testing.assert_array_equal(J[null], m.coeffs[null] ** 2)

    def test_worked_example(self):
        op = eigendecompose(np.diag([2.0, 0.0]))
        m = flow.build(op, [0.0, 0.0], [2.0, 1.0])
        a, J = flow.spectral_coefficients(m, np.log(2.0))
        np.testing.assert_allclose(J, [1.0, 1.0], rtol=1e-14)
        np.testing.assert_allclose(a, [1.5, 0.0], rtol=1e-14)

    def test_reconstructs_blup(self, rng):
        m, _ = _model(rng, n=10, rank=6)
        for t in (0.05, 1.0, 20.0):
            a, _ = flow.spectral_coefficients(m, t)
            np.testing.assert_allclose(m.op.eigenvectors @ a, flow.blup(m, t), atol=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_direct_minimisation_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = 6
        m, _ = _model(rng, n=n, rank=4)
        t = 0.3
        V, lam = m.op.eigenvectors, m.op.eigenvalues
        pos = lam > 0

        def objective(a_pos):
            a = np.zeros(n)
            a[pos] = a_pos
            fit = m.residual - V @ a
            return fit @ fit + np.sum(a_pos**2 / np.expm1(t * lam[pos]))

        res = minimize(objective, np.zeros(pos.sum()), method="BFGS", options={"gtol": 1e-12})
        a, _ = flow.spectral_coefficients(m, t)
        np.testing.assert_allclose(res.x, a[pos], atol=1e-6)
        np.testing.assert_array_equal(a[~pos], 0.0)
