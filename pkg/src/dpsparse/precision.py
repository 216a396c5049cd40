"""Private estimation of one column of the precision matrix.

Column j of Omega = Sigma^{-1} minimises 0.5 w'Sigma w - w'e_j, so it can be
fitted with the same split/threshold/project loop as the regression
coefficients, using the clipped quadratic-loss gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mechanisms import InvalidParameterError, NoiseMode, PrivacyBudget, clip_scalar, laplace_noise
from .regression import (
    Dataset,
    IhtConfig,
    _check_splits,
    _iht_loop,
    bic_penalty,
    compute_K,
    default_T,
    split_rows,
)


@dataclass
class PrecisionColumnEstimate:
    j: int
    w: np.ndarray
    support: np.ndarray
    k: int = -1
    bic_value: float | None = None


def precision_config(n: int, L: float, cx: float, C: float, *, eta0: float = 0.5,
                     T: int | None = None, **kw) -> IhtConfig:
    """R = 2L sqrt(log n); B = 2(L cx) cx, raised to 2 R cx if that is larger."""
    R = 2 * L * math.sqrt(math.log(n))
    B = max(2 * L * cx * cx, 2 * R * cx)
    return IhtConfig(eta0=eta0, T=T or default_T(n), R=R, C=C, B=B, cx=cx, **kw)


def precision_gradient(w: np.ndarray, X: np.ndarray, j: int, eta0: float, R: float,
                       sign: str = "descent") -> np.ndarray:
    """One half-step on the clipped quadratic loss over the rows in ``X``.

    ``descent`` moves along e_j - Sigma_clip w, whose fixed point solves
    Sigma w = e_j. ``literal`` uses the opposite sign,
    w - eta0 (e_j - Sigma_clip w).
    """
    m, p = X.shape
    if m == 0:
        raise InvalidParameterError("gradient over an empty slice")
    if not 0 <= j < p:
        raise InvalidParameterError(f"column index {j} out of range for p={p}")
    g = X.T @ clip_scalar(X @ w, R) / m
    g[j] -= 1.0  # g = Sigma_clip w - e_j
    if sign == "descent":
        return w - eta0 * g
    if sign == "literal":
        return w + eta0 * g
    raise InvalidParameterError(f"unknown gradient sign {sign!r}")


def _default_w0(p: int, j: int, C: float) -> np.ndarray:
    w0 = np.zeros(p)
    w0[j] = min(1.0, C)
    return w0


def _step(cfg: IhtConfig, j: int):
    return lambda w, X, y: precision_gradient(w, X, j, cfg.eta0, cfg.R, cfg.gradient_sign)


def dp_precision_fixed(data: Dataset, j: int, s_star: int, epsilon: float, delta: float,
                       cfg: IhtConfig, rng: np.random.Generator,
                       w0: np.ndarray | None = None, budget: PrivacyBudget | None = None,
                       splits: list[np.ndarray] | None = None) -> PrecisionColumnEstimate:
    """Private IHT estimate of w_j at known sparsity; T steps of (epsilon/T, delta/T)."""
    if budget is None:
        budget = PrivacyBudget(epsilon, delta)
    if splits is None:
        splits = split_rows(data.n, cfg.T, rng)
    _check_splits(splits, data.n)
    T = len(splits)
    if w0 is None:
        w0 = _default_w0(data.p, j, cfg.C)
    w = _iht_loop(data, s_star, epsilon / T, delta / T, cfg, splits, w0, rng, budget,
                  _step(cfg, j), f"w{j}")
    return PrecisionColumnEstimate(j=j, w=w, support=np.flatnonzero(w))


def quadratic_bic_loss(w: np.ndarray, X: np.ndarray, j: int) -> float:
    """n (w' Sigma_hat w / 2 - w_j) with Sigma_hat = X'X/n, without forming Sigma_hat."""
    n = X.shape[0]
    Xw = X @ w
    return float(Xw @ Xw / 2.0 - n * w[j])


def adaptive_dp_precision(data: Dataset, j: int, budget: PrivacyBudget, cfg: IhtConfig,
                          c0: float, rng: np.random.Generator,
                          w0: np.ndarray | None = None) -> PrecisionColumnEstimate:
    """Precision column with DP-BIC sparsity choice, spending exactly the given budget.

    The BIC is evaluated on the full sample and perturbed with Laplace noise of
    scale R^2 (K+2)/epsilon.
    """
    if budget.spent_epsilon or budget.spent_delta:
        raise InvalidParameterError("adaptive precision estimation needs a fresh budget")
    if cfg.cx is not None and cfg.B < 2 * cfg.R * cfg.cx:
        raise InvalidParameterError(
            f"B = {cfg.B} is below the privacy floor 2*R*cx = {2 * cfg.R * cfg.cx}")
    eps, delta = budget.epsilon, budget.delta
    n, p = data.n, data.p
    if not 0 <= j < p:
        raise InvalidParameterError(f"column index {j} out of range for p={p}")
    K = compute_K(n, p, cfg.log_base, cfg.K, cfg.K_max)
    splits = split_rows(n, cfg.T, rng)
    _check_splits(splits, n)
    T = len(splits)
    if w0 is None:
        w0 = _default_w0(p, j, cfg.C)
    step_eps = eps / (T * (K + 2))
    step_delta = delta / (T * (K + 1))
    fits = []
    for k in range(K + 1):
        w = _iht_loop(data, 2 ** k, step_eps, step_delta, cfg, splits, w0, rng, budget,
                      _step(cfg, j), f"w{j}")
        fits.append((k, w))

    scale = cfg.R ** 2 * (K + 2) / eps
    budget.charge(eps / (K + 2), 0.0, f"w{j}:bic")
    z = laplace_noise(scale, len(fits), rng, cfg.noise_mode)
    scores = np.array([
        quadratic_bic_loss(w, data.X, j) + bic_penalty(k, n, p, eps, delta, c0, n_power=2)
        + z[i]
        for i, (k, w) in enumerate(fits)
    ])
    best = int(np.argmin(scores))
    k, w = fits[best]
    return PrecisionColumnEstimate(j=j, w=w, support=np.flatnonzero(w), k=k,
                                   bic_value=float(scores[best]))
