import math

import numpy as np
import pytest

import dpsparse.precision as prec
from dpsparse.mechanisms import InvalidParameterError, NoiseMode, PrivacyBudget
from dpsparse.precision import (
    adaptive_dp_precision,
    dp_precision_fixed,
    precision_config,
    precision_gradient,
    quadratic_bic_loss,
)
from dpsparse.regression import Dataset, bic_penalty, compute_K
from dpsparse.synth import DesignSpec, draw_design

OFF = NoiseMode.DISABLED


def design(n, p, rho=0.0, seed=0):
    return draw_design(DesignSpec(n=n, p=p, rho=rho), np.random.default_rng(seed))


class TestGradient:
    def test_from_zero(self, rng):
        X = rng.standard_normal((7, 4))
        np.testing.assert_array_equal(
            precision_gradient(np.zeros(4), X, 2, 0.3, 5.0, "literal"), [0, 0, -0.3, 0])
        np.testing.assert_array_equal(
            precision_gradient(np.zeros(4), X, 2, 0.3, 5.0, "descent"), [0, 0, 0.3, 0])

    def test_scalar_literal_arithmetic(self):
        out = precision_gradient(np.array([0.5]), np.array([[2.0]]), 0, 1.0, 100.0, "literal")
        assert out.tolist() == [1.5]

    def test_descent_fixed_point_solves_normal_equations(self, rng):
        X = rng.standard_normal((200, 5))
        Sig = X.T @ X / 200
        w = np.zeros(5)
        for _ in range(2000):
            w = precision_gradient(w, X, 1, 0.5, 1e9)
        np.testing.assert_allclose(w, np.linalg.solve(Sig, np.eye(5)[1]), atol=1e-6)

    def test_central_differences_ten_points(self, rng):
        X = rng.standard_normal((60, 6))
        Sig = X.T @ X / 60
        j, eta, h = 3, 0.4, 1e-5
        loss = lambda w: 0.5 * w @ Sig @ w - w[j]  # noqa: E731
        for _ in range(10):
            w = rng.standard_normal(6)
            grad = (w - precision_gradient(w, X, j, eta, 1e12)) / eta
            fd = np.array([(loss(w + h * e) - loss(w - h * e)) / (2 * h) for e in np.eye(6)])
            np.testing.assert_allclose(grad, fd, rtol=1e-6)

    def test_errors(self, rng):
        with pytest.raises(InvalidParameterError):
            precision_gradient(np.zeros(2), np.empty((0, 2)), 0, 1.0, 1.0)
        with pytest.raises(InvalidParameterError):
            precision_gradient(np.zeros(2), np.ones((3, 2)), 2, 1.0, 1.0)
        with pytest.raises(InvalidParameterError):
            precision_gradient(np.zeros(2), np.ones((3, 2)), 0, 1.0, 1.0, "sideways")


class TestFixed:
    def test_identity_design(self):
        X = design(5000, 50)
        cfg = precision_config(5000, 1.0, 6.0, 2.0, noise_mode=OFF)
        est = dp_precision_fixed(Dataset(X, np.zeros(5000)), 7, 1, 1.0, 0.1, cfg,
                                 np.random.default_rng(0))
        assert np.linalg.norm(est.w - np.eye(50)[7]) <= 0.1

    def _ar_case(self, seed):
        X = design(5000, 20, rho=0.5)
        S = np.array([4, 5, 6])
        Sig = X.T @ X / 5000
        ref = np.linalg.solve(Sig[np.ix_(S, S)], np.eye(3)[1])
        cfg = precision_config(5000, 3.0, 6.0, 6.0, noise_mode=OFF)
        est = dp_precision_fixed(Dataset(X, np.zeros(5000)), 5, 3, 1.0, 0.1, cfg,
                                 np.random.default_rng(seed))
        return est, S, ref

    def test_ar_design_support_and_rough_values(self):
        # analytic AR(1) inverse: diagonal (1+rho^2)/(1-rho^2), neighbours -rho/(1-rho^2)
        est, S, ref = self._ar_case(1)
        assert est.support.tolist() == S.tolist()
        np.testing.assert_allclose(ref, [-2 / 3, 5 / 3, -2 / 3], atol=0.05)
        assert np.max(np.abs(est.w[S] - ref)) <= 0.2

    @pytest.mark.xfail(strict=True, reason="one pass over T splits leaves stochastic error "
                       "~0.1 from the last split's sample Gram (see ledger)")
    def test_ar_design_matches_oracle_to_005(self):
        est, S, ref = self._ar_case(1)
        assert np.max(np.abs(est.w[S] - ref)) <= 0.05

    def test_identity_sanity_wjj(self):
        X = design(20000, 10)
        cfg = precision_config(20000, 1.0, 6.0, 2.0, T=20, noise_mode=OFF)
        est = dp_precision_fixed(Dataset(X, np.zeros(20000)), 0, 1, 1.0, 0.1, cfg,
                                 np.random.default_rng(0))
        assert est.w[0] == pytest.approx(1 / X[:, 0].var(), rel=0.1)

    def test_budget_and_invariants(self, rng):
        X = design(300, 12, seed=3)
        b = PrivacyBudget(1.0, 1e-3)
        cfg = precision_config(300, 1.0, 6.0, 2.0)
        est = dp_precision_fixed(Dataset(X, np.zeros(300)), 2, 2, 1.0, 1e-3, cfg, rng, budget=b)
        assert b.is_exhausted() and np.count_nonzero(est.w) <= 2
        assert np.linalg.norm(est.w) <= 2.0 * (1 + 1e-9)


class TestAdaptive:
    def test_quadratic_loss_uses_full_gram(self, rng):
        X = rng.standard_normal((80, 6))
        w = rng.standard_normal(6)
        Sig = X.T @ X / 80
        assert quadratic_bic_loss(w, X, 2) == pytest.approx(80 * (w @ Sig @ w / 2 - w[2]),
                                                            rel=1e-10)

    def test_c0_zero_is_loss_argmin(self, rng, monkeypatch):
        X = design(400, 10, seed=4)
        data = Dataset(X, np.zeros(400))
        cfg = precision_config(400, 1.0, 6.0, 2.0, K=2, noise_mode=OFF)
        est = adaptive_dp_precision(data, 1, PrivacyBudget(1.0, 1e-3), cfg, 0.0,
                                    np.random.default_rng(0))
        # rebuild the candidates from the same split draw to check the argmin directly
        # (noise is off, so the stream is only used for the split draw)
        splits = prec.split_rows(400, cfg.T, np.random.default_rng(0))
        losses = []
        for k in range(3):
            gen = np.random.default_rng(0)
            w = prec._iht_loop(data, 2 ** k, 0.1, 0.01, cfg, splits, prec._default_w0(10, 1, 2.0),
                               gen, PrivacyBudget(1e9, 0.99), prec._step(cfg, 1), "t")
            losses.append(quadratic_bic_loss(w, X, 1))
        assert est.k == int(np.argmin(losses))

    def test_bic_noise_scale_and_charge(self, rng, monkeypatch):
        seen = []
        real = prec.laplace_noise

        def spy(scale, count, rng_, mode=NoiseMode.CALIBRATED):
            seen.append((scale, count))
            return real(scale, count, rng_, mode)

        monkeypatch.setattr(prec, "laplace_noise", spy)
        X = design(500, 16, seed=2)
        cfg = precision_config(500, 1.0, 6.0, 2.0, K=2)
        b = PrivacyBudget(0.8, 1e-3)
        adaptive_dp_precision(Dataset(X, np.zeros(500)), 0, b, cfg, 1.0, rng)
        assert seen == [(cfg.R ** 2 * 4 / 0.8, 3)]
        bic = [c for c in b.charges if c[0].endswith(":bic")]
        assert bic == [("w0:bic", 0.8 / 4, 0.0)]
        assert abs(b.spent_epsilon - 0.8) <= 1e-12 and abs(b.spent_delta - 1e-3) <= 1e-12

    def test_penalty_uses_n_squared(self):
        lp, ln = math.log(50), math.log(1000)
        expect = lp * ln * 2 + lp ** 2 * 4 * math.log(1e3) * ln ** 7 / (1000 ** 2 * 0.25)
        assert bic_penalty(1, 1000, 50, 0.5, 1e-3, 1.0, n_power=2) == pytest.approx(expect)

    @pytest.mark.xfail(strict=True, reason="NoisyHT Laplace scale ~1.4 against a unit diagonal "
                       "at n=5000, eps=2 keeps j out of most supports (see ledger)")
    def test_identity_support_contains_j(self):
        X = design(5000, 50)
        cfg = precision_config(5000, 1.0, 6.0, 2.0)
        hits = sum(3 in adaptive_dp_precision(Dataset(X, np.zeros(5000)), 3,
                                              PrivacyBudget(2.0, 5000 ** -1.1), cfg, 1.0,
                                              np.random.default_rng(s)).support
                   for s in range(50))
        assert hits >= 48

    def test_privacy_floor(self, rng):
        cfg = precision_config(100, 1.0, 6.0, 2.0, K=1).with_(B=1.0)
        with pytest.raises(InvalidParameterError, match="floor"):
            adaptive_dp_precision(Dataset(rng.standard_normal((100, 4)), np.zeros(100)), 0,
                                  PrivacyBudget(1.0, 0.01), cfg, 1.0, rng)

    def test_K_shared_with_regression(self):
        assert compute_K(5000, 50) == 2
