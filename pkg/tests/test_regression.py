import math

import numpy as np
import pytest

from dpsparse.mechanisms import InvalidParameterError, NoiseMode, PrivacyBudget
from dpsparse.regression import (
    Dataset,
    IhtConfig,
    SparseEstimate,
    _check_iterate,
    adaptive_dp_regression,
    bic_penalty,
    clipped_gradient,
    compute_K,
    dp_bic_select,
    dp_iht_fixed_sparsity,
    regression_config,
    split_rows,
)
from dpsparse.synth import DesignSpec, generate

OFF = NoiseMode.DISABLED


def off_cfg(**kw):
    base = dict(eta0=0.5, T=5, R=1e9, C=1e9, B=1.0, noise_mode=OFF)
    return IhtConfig(**{**base, **kw})


class TestClippedGradient:
    def test_unit_step(self):
        out = clipped_gradient(np.zeros(2), np.array([[1.0, 0.0]]), np.array([2.0]), 1.0, 5.0)
        assert out.tolist() == [2.0, 0.0]

    def test_response_clipped(self):
        out = clipped_gradient(np.zeros(2), np.array([[1.0, 0.0]]), np.array([10.0]), 1.0, 5.0)
        assert out.tolist() == [5.0, 0.0]

    def test_matches_unclipped_least_squares(self, rng):
        X, y, b = rng.standard_normal((20, 5)), rng.standard_normal(20), rng.standard_normal(5)
        expected = b + 0.3 / 20 * X.T @ (y - X @ b)
        np.testing.assert_allclose(clipped_gradient(b, X, y, 0.3, 1e6), expected, atol=1e-10)

    def test_central_differences_ten_points(self, rng):
        X, y = rng.standard_normal((40, 6)), rng.standard_normal(40)
        n = len(y)
        loss = lambda b: 0.5 * np.sum((y - X @ b) ** 2) / n  # noqa: E731
        h, eta = 1e-5, 0.7
        for _ in range(10):
            b = rng.standard_normal(6)
            grad = (b - clipped_gradient(b, X, y, eta, 1e12)) / eta
            fd = np.array([(loss(b + h * e) - loss(b - h * e)) / (2 * h) for e in np.eye(6)])
            np.testing.assert_allclose(grad, fd, rtol=1e-6)

    def test_empty_slice(self):
        with pytest.raises(InvalidParameterError):
            clipped_gradient(np.zeros(2), np.empty((0, 2)), np.empty(0), 1.0, 1.0)


class TestSplits:
    @pytest.mark.parametrize("n,T", [(10, 3), (7, 7), (100, 1), (101, 8)])
    def test_partition(self, rng, n, T):
        parts = split_rows(n, T, rng)
        allrows = np.concatenate(parts)
        assert len(parts) == T and sorted(allrows.tolist()) == list(range(n))
        assert max(map(len, parts)) - min(map(len, parts)) <= 1

    def test_too_many_splits(self, rng):
        with pytest.raises(InvalidParameterError):
            split_rows(3, 4, rng)


def deterministic_iht(X, y, s, eta0, splits, C, beta0):
    """Reference IHT written out directly (no clipping, no noise)."""
    b = beta0.copy()
    for idx in splits:
        Xt, yt = X[idx], y[idx]
        half = b - (eta0 / len(idx)) * (Xt.T @ (Xt @ b - yt))
        keep = sorted(range(len(half)), key=lambda j: (-abs(half[j]), j))[:s]
        b = np.zeros_like(half)
        b[keep] = half[keep]
        nb = np.linalg.norm(b)
        if nb > C:
            b *= C / nb
    return b


class TestFixedSparsity:
    def test_equals_deterministic_iht_step_for_step(self):
        gen = np.random.default_rng(5)
        X, y = gen.standard_normal((100, 10)), gen.standard_normal(100)
        for T in range(1, 7):
            splits = split_rows(100, T, np.random.default_rng(9))
            for s in (1, 3, 10):
                ref = deterministic_iht(X, y, s, 0.5, splits, 2.0, np.zeros(10))
                got = dp_iht_fixed_sparsity(Dataset(X, y), s, 1.0, 0.1, off_cfg(T=T, C=2.0),
                                            np.random.default_rng(0), splits=splits).beta
                assert np.array_equal(got, ref)

    def test_zero_noise_support_recovery(self):
        gen = np.random.default_rng(11)
        X = gen.standard_normal((500, 20))
        beta = np.r_[np.ones(3), np.zeros(17)]
        y = X @ beta + 0.1 * gen.standard_normal(500)
        cfg = off_cfg(T=math.ceil(math.log(500)), R=50.0, C=10.0)
        est = dp_iht_fixed_sparsity(Dataset(X, y), 3, 1.0, 0.1, cfg, gen)
        assert est.support.tolist() == [0, 1, 2]
        assert np.linalg.norm(est.beta - beta) <= 0.1

    @pytest.mark.xfail(strict=True, reason="one pass of T single-row steps over 50 rows cannot "
                       "reach 1e-3; best over (T, eta0) is ~2.6e-2 (see ledger)")
    def test_full_sparsity_reaches_ols_50x5(self):
        gen = np.random.default_rng(0)
        X = gen.standard_normal((50, 5))
        y = X @ np.array([1.0, -2.0, 0.5, 0.0, 3.0]) + 0.1 * gen.standard_normal(50)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        est = dp_iht_fixed_sparsity(Dataset(X, y), 5, 1.0, 0.1, off_cfg(T=50, eta0=0.15), gen)
        assert np.linalg.norm(est.beta - ols) <= 1e-3

    def test_full_sparsity_reaches_ols_noiseless(self):
        # with y = X beta every split shares the OLS fixed point, so the contraction is exact
        gen = np.random.default_rng(0)
        X = gen.standard_normal((5000, 5))
        beta = np.array([1.0, -2.0, 0.5, 0.0, 3.0])
        y = X @ beta
        est = dp_iht_fixed_sparsity(Dataset(X, y), 5, 1.0, 0.1, off_cfg(T=50), gen)
        assert np.linalg.norm(est.beta - np.linalg.lstsq(X, y, rcond=None)[0]) <= 1e-3

    def test_budget_per_step(self, rng):
        X, y = rng.standard_normal((60, 8)), rng.standard_normal(60)
        b = PrivacyBudget(0.7, 1e-3)
        cfg = IhtConfig(eta0=0.5, T=6, R=3.0, C=2.0, B=10.0)
        dp_iht_fixed_sparsity(Dataset(X, y), 2, 0.7, 1e-3, cfg, rng, budget=b)
        assert len(b.charges) == 6
        assert all(c[1] == 0.7 / 6 and c[2] == 1e-3 / 6 for c in b.charges)
        assert b.is_exhausted()

    @pytest.mark.xfail(strict=True, reason="with the literal NoisyHT constants the Laplace scale "
                       "(~10^2) swamps unit signals at n=2000 (see ledger)")
    def test_error_envelope_paper_scale(self):
        spec = DesignSpec(n=2000, p=2000, s0=8, amplitude=1.0)
        data, beta, _ = generate(spec, np.random.default_rng(0))
        cfg = regression_config(2000, 1.0, 6.0, 2 * math.sqrt(8))
        delta = 2000 ** -1.1
        errs = [np.linalg.norm(dp_iht_fixed_sparsity(data, 8, 0.5, delta, cfg,
                                                     np.random.default_rng(s)).beta - beta)
                for s in range(20)]
        assert max(errs) < 0.5

    def test_iterate_invariants_asserted(self):
        with pytest.raises(AssertionError):
            _check_iterate(np.array([1.0, 1.0, 0.0]), 1, 10.0)
        with pytest.raises(AssertionError):
            _check_iterate(np.array([3.0, 0.0]), 1, 2.0)


class TestBic:
    def test_exact_fit_wins(self, rng):
        X = rng.standard_normal((30, 4))
        beta = np.array([1.0, 0.0, 0.0, 0.0])
        y = X @ beta
        a = SparseEstimate.from_beta(beta, k=0)
        b = SparseEstimate.from_beta(np.zeros(4), k=0)
        assert np.sum(y ** 2) > 1  # B's residual sum is material
        got = dp_bic_select(Dataset(X, y), [b, a], 1.0, 0.1, 1e9, 1.0, 1, rng, mode=OFF)
        assert got.beta is a.beta

    def test_c0_zero_is_rss_argmin(self, rng):
        X, y = rng.standard_normal((50, 6)), rng.standard_normal(50)
        cands = [SparseEstimate.from_beta(rng.standard_normal(6) * 0.3, k=k) for k in range(4)]
        rss = [np.sum((y - X @ c.beta) ** 2) for c in cands]
        got = dp_bic_select(Dataset(X, y), cands, 1.0, 0.1, 1e9, 0.0, 3, rng, mode=OFF)
        assert got.k == int(np.argmin(rss))

    def test_penalty_formula(self):
        k, n, p, eps, delta = 2, 1000, 50, 0.5, 1e-4
        lp, ln = math.log(p), math.log(n)
        expect = lp * ln * 4 + lp ** 2 * 16 * math.log(1e4) * ln ** 7 / (n * 0.25)
        assert bic_penalty(k, n, p, eps, delta, 1.0) == pytest.approx(expect, rel=1e-13)

    def test_empty_candidates(self, rng):
        with pytest.raises(InvalidParameterError):
            dp_bic_select(Dataset(np.ones((2, 1)), np.ones(2)), [], 1.0, 0.1, 1.0, 1.0, 0, rng)

    @pytest.mark.xfail(strict=True, reason="the privacy term of the BIC penalty is ~1e5 times "
                       "the residual sum at n=4000, so k=0 always wins (see ledger)")
    def test_selects_enough_sparsity(self):
        spec = DesignSpec(n=4000, p=100, s0=4, amplitude=1.0)
        hits = 0
        for s in range(50):
            data, _, _ = generate(spec, np.random.default_rng(s))
            cfg = regression_config(4000, 1.0, 6.0, 4.0, K=5)
            est = adaptive_dp_regression(data, PrivacyBudget(0.5, 4000 ** -1.1), cfg, 1.0,
                                         np.random.default_rng(100 + s))
            hits += 2 ** est.k >= 4
        assert hits >= 45


class TestK:
    def test_large_n(self):
        assert compute_K(10**6, 100) == 5
        assert math.floor(math.log2(1000 / math.log(100) ** 2)) == 5

    def test_negative_K_errors(self):
        with pytest.raises(InvalidParameterError, match="fixed-sparsity"):
            compute_K(2000, 2000)

    def test_forced_and_clamped(self):
        assert compute_K(2000, 2000, forced=3) == 3
        assert compute_K(10**12, 8) == 3  # 2^k may not exceed p
        assert compute_K(10**30, 10**6, K_max=12) == 12
        with pytest.raises(InvalidParameterError):
            compute_K(100, 10, forced=-1)


class TestAdaptive:
    def test_budget_audit(self, rng):
        spec = DesignSpec(n=400, p=30, s0=2)
        data, _, _ = generate(spec, rng)
        b = PrivacyBudget(0.5, 400 ** -1.1)
        cfg = regression_config(400, 1.0, 6.0, 3.0, K=3)
        est = adaptive_dp_regression(data, b, cfg, 1.0, rng)
        assert abs(b.spent_epsilon - 0.5) <= 1e-12 and abs(b.spent_delta - 400 ** -1.1) <= 1e-12
        assert 0 <= est.k <= 3 and len(est.candidates) == 4
        T = cfg.T
        steps = [c for c in b.charges if c[0].startswith("iht")]
        assert len(steps) == T * 4
        assert steps[0][1] == pytest.approx(0.5 / (T * 5)) and steps[0][2] == pytest.approx(
            400 ** -1.1 / (T * 4))

    @pytest.mark.xfail(strict=True, reason="noise-free runs still pay the privacy part of the "
                       "BIC penalty, which forces k=0 (s=1) at this n (see ledger)")
    def test_zero_noise_support_superset(self):
        for s in range(20):
            gen = np.random.default_rng(s)
            X = gen.standard_normal((2000, 20))
            beta = np.r_[3.0, -3.0, np.zeros(18)]
            y = X @ beta + gen.standard_normal(2000)
            cfg = regression_config(2000, 1.0, 6.0, 10.0, K=3, noise_mode=OFF)
            est = adaptive_dp_regression(Dataset(X, y), PrivacyBudget(0.5, 1e-4), cfg, 1.0, gen)
            assert {0, 1} <= set(est.support.tolist())

    def test_needs_fresh_budget_and_privacy_floor(self, rng):
        data = Dataset(rng.standard_normal((50, 4)), rng.standard_normal(50))
        b = PrivacyBudget(1.0, 0.1)
        b.charge(0.1, 0.0)
        cfg = IhtConfig(eta0=0.5, T=3, R=2.0, C=1.0, B=100.0, K=1)
        with pytest.raises(InvalidParameterError):
            adaptive_dp_regression(data, b, cfg, 1.0, rng)
        with pytest.raises(InvalidParameterError, match="floor"):
            adaptive_dp_regression(data, PrivacyBudget(1.0, 0.1), cfg.with_(cx=6.0, B=1.0), 1.0,
                                   rng)

    def test_record(self):
        rec = SparseEstimate.from_beta(np.array([0.0, 1.5, 0.0, -2.0]), k=1).to_record()
        assert rec["support"] == "1 3" and rec["values"] == "1.5 -2.0" and rec["k"] == 1
