"""Private debiased estimation and confidence intervals for a single coefficient."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .mechanisms import (
    InvalidParameterError,
    NoiseMode,
    PrivacyBudget,
    clip_scalar,
    gaussian_noise,
    gaussian_std,
)
from .precision import PrecisionColumnEstimate, adaptive_dp_precision
from .regression import Dataset, IhtConfig, SparseEstimate, adaptive_dp_regression


class DegenerateVarianceWarning(UserWarning):
    pass


def debias_noise_variance(R: float, n: int, epsilon: float, delta: float) -> float:
    """Variance of the Gaussian noise added to the debiased estimate.

    The correction term has sensitivity 4R^2/n; (epsilon, delta) is the slice
    spent on this step.
    """
    return gaussian_std(4 * R * R / n, epsilon, delta) ** 2


def sigma2_noise_variance(R: float, n: int, epsilon: float, delta: float) -> float:
    """Variance of the noise on the residual mean square (sensitivity 2(2R)^2/n)."""
    return gaussian_std(2 * (2 * R) ** 2 / n, epsilon, delta) ** 2


def z_quantile(alpha: float) -> float:
    """Two-sided standard normal critical value z_{alpha/2}."""
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    return float(norm.ppf(1 - alpha / 2))


def _beta_vec(beta_hat) -> np.ndarray:
    return beta_hat.beta if isinstance(beta_hat, SparseEstimate) else np.asarray(beta_hat, float)


def _w_vec(w_hat) -> np.ndarray:
    return w_hat.w if isinstance(w_hat, PrecisionColumnEstimate) else np.asarray(w_hat, float)


def debias(data: Dataset, beta_hat, w_hat, j: int, R: float, epsilon: float, delta: float,
           rng: np.random.Generator, budget: PrivacyBudget | None = None,
           mode: NoiseMode = NoiseMode.CALIBRATED) -> float:
    """One-step private correction of beta_hat[j].

    beta_hat_j + mean_i clip(x_i'w)(clip(y_i) - clip(x_i'beta_hat)) + z_j, with
    z_j Gaussian at the variance given by :func:`debias_noise_variance` for the
    (epsilon, delta) slice.
    """
    beta = _beta_vec(beta_hat)
    w = _w_vec(w_hat)
    n = data.n
    if budget is not None:
        budget.charge(epsilon, delta, f"debias{j}")
    r = clip_scalar(data.y, R) - clip_scalar(data.X @ beta, R)
    corr = float(clip_scalar(data.X @ w, R) @ r) / n
    z = gaussian_noise(math.sqrt(debias_noise_variance(R, n, epsilon, delta)), 1, rng, mode)[0]
    return float(beta[j] + corr + z)


def dp_sigma2(data: Dataset, beta_hat, R: float, epsilon: float, delta: float,
              rng: np.random.Generator, budget: PrivacyBudget | None = None,
              mode: NoiseMode = NoiseMode.CALIBRATED) -> tuple[float, float]:
    """Private noise-variance estimate; returns (clamped at 0, raw)."""
    beta = _beta_vec(beta_hat)
    n = data.n
    if budget is not None:
        budget.charge(epsilon, delta, "sigma2")
    r = clip_scalar(data.y, R) - clip_scalar(data.X @ beta, R)
    raw = float(r @ r) / n
    raw += gaussian_noise(math.sqrt(sigma2_noise_variance(R, n, epsilon, delta)), 1, rng, mode)[0]
    return max(raw, 0.0), raw


@dataclass
class InferenceResult:
    j: int
    beta_db: float
    sigma2_hat: float
    sigma2_raw: float
    w_jj_hat: float
    V_hat: float
    V_c: float
    alpha: float
    n: int
    ci_naive: tuple[float, float]
    ci_corrected: tuple[float, float]
    degenerate: bool = False
    beta_hat_j: float = float("nan")
    k_beta: int = -1
    k_w: int = -1

    @property
    def width_naive(self) -> float:
        return self.ci_naive[1] - self.ci_naive[0]

    @property
    def width_corrected(self) -> float:
        return self.ci_corrected[1] - self.ci_corrected[0]

    def studentized(self, beta_j: float) -> float:
        """sqrt(n)(beta_db - beta_j) / sqrt(V_hat + n V_c)."""
        v = max(self.V_hat, 0.0) + self.n * self.V_c
        return math.sqrt(self.n) * (self.beta_db - beta_j) / math.sqrt(v) if v > 0 else math.nan

    def to_row(self) -> dict:
        return {
            "j": self.j,
            "beta_db": self.beta_db,
            "sigma2_hat": self.sigma2_hat,
            "w_jj_hat": self.w_jj_hat,
            "V_hat": self.V_hat,
            "V_c": self.V_c,
            "lo_naive": self.ci_naive[0],
            "hi_naive": self.ci_naive[1],
            "lo_corr": self.ci_corrected[0],
            "hi_corr": self.ci_corrected[1],
            "degenerate_flag": int(self.degenerate),
        }


def build_intervals(j: int, beta_db: float, w_jj: float, sigma2_hat: float, sigma2_raw: float,
                    V_c: float, alpha: float, n: int, **extra) -> InferenceResult:
    """Naive and noise-corrected intervals around beta_db.

    A non-positive w_jj or a negative raw sigma^2 marks the result degenerate;
    its intervals then use V_c alone.
    """
    z = z_quantile(alpha)
    V_hat = w_jj * sigma2_hat
    degenerate = w_jj <= 0 or sigma2_raw < 0
    if degenerate:
        warnings.warn(f"degenerate variance estimate for coordinate {j}: "
                      f"w_jj={w_jj:.4g}, sigma2={sigma2_raw:.4g}", DegenerateVarianceWarning,
                      stacklevel=2)
    v_plug = 0.0 if degenerate else V_hat / n
    half_naive = z * math.sqrt(v_plug)
    half_corr = z * math.sqrt(v_plug + V_c)
    return InferenceResult(
        j=j, beta_db=beta_db, sigma2_hat=sigma2_hat, sigma2_raw=sigma2_raw, w_jj_hat=w_jj,
        V_hat=V_hat, V_c=V_c, alpha=alpha, n=n,
        ci_naive=(beta_db - half_naive, beta_db + half_naive),
        ci_corrected=(beta_db - half_corr, beta_db + half_corr),
        degenerate=degenerate, **extra,
    )


def dp_confidence_interval(data: Dataset, j: int, alpha: float, budget: PrivacyBudget,
                           beta_cfg: IhtConfig, w_cfg: IhtConfig, rng: np.random.Generator,
                           c0: float = 1.0, c0_w: float | None = None) -> InferenceResult:
    """(1 - alpha) private confidence interval for beta_j.

    Four steps, each charged a quarter of the budget: adaptive regression,
    adaptive precision column j, the debiased estimate and the residual
    variance. Clipping in the last two steps uses ``beta_cfg.R``.
    """
    if budget.spent_epsilon or budget.spent_delta:
        raise InvalidParameterError("confidence interval needs a fresh budget")
    if not 0 <= j < data.p:
        raise InvalidParameterError(f"column index {j} out of range for p={data.p}")
    z_quantile(alpha)
    eps4, delta4 = budget.epsilon / 4, budget.delta / 4
    mode = beta_cfg.noise_mode
    R = beta_cfg.R

    beta_hat = adaptive_dp_regression(data, budget.split(eps4, delta4, "beta"), beta_cfg, c0, rng)
    w_hat = adaptive_dp_precision(data, j, budget.split(eps4, delta4, "w"), w_cfg,
                                  c0 if c0_w is None else c0_w, rng)
    return _finish_interval(data, j, alpha, beta_hat, w_hat, R, eps4, delta4, budget, rng, mode)


def _finish_interval(data, j, alpha, beta_hat, w_hat, R, eps4, delta4, budget, rng, mode,
                     sigma2=None):
    beta_db = debias(data, beta_hat, w_hat, j, R, eps4, delta4, rng, budget, mode)
    if sigma2 is None:
        sigma2 = dp_sigma2(data, beta_hat, R, eps4, delta4, rng, budget, mode)
    sigma2_hat, sigma2_raw = sigma2
    V_c = 0.0 if mode is NoiseMode.DISABLED else debias_noise_variance(R, data.n, eps4, delta4)
    return build_intervals(j, beta_db, float(w_hat.w[j]), sigma2_hat, sigma2_raw, V_c, alpha,
                           data.n, beta_hat_j=float(beta_hat.beta[j]), k_beta=beta_hat.k,
                           k_w=w_hat.k)


def dp_confidence_intervals(data: Dataset, js, alpha: float, budget: PrivacyBudget,
                            beta_cfg: IhtConfig, w_cfg: IhtConfig, rng: np.random.Generator,
                            c0: float = 1.0, c0_w: float | None = None,
                            shared: bool = False) -> list[InferenceResult]:
    """Intervals for several coordinates.

    By default the budget is divided evenly and every coordinate runs the full
    four-step procedure on its share. With ``shared=True`` the regression fit
    and the variance estimate are released once and reused, and the budget is
    cut into 2 + 2*len(js) equal slices.
    """
    js = list(js)
    out = []
    if not shared:
        for j in js:
            sub = budget.split(budget.epsilon / len(js), budget.delta / len(js), f"j{j}")
            out.append(dp_confidence_interval(data, j, alpha, sub, beta_cfg, w_cfg, rng, c0, c0_w))
        return out
    m = 2 + 2 * len(js)
    eps_q, delta_q = budget.epsilon / m, budget.delta / m
    mode = beta_cfg.noise_mode
    R = beta_cfg.R
    beta_hat = adaptive_dp_regression(data, budget.split(eps_q, delta_q, "beta"), beta_cfg, c0,
                                      rng)
    sigma2 = dp_sigma2(data, beta_hat, R, eps_q, delta_q, rng, budget, mode)
    for j in js:
        w_hat = adaptive_dp_precision(data, j, budget.split(eps_q, delta_q, f"w{j}"), w_cfg,
                                      c0 if c0_w is None else c0_w, rng)
        out.append(_finish_interval(data, j, alpha, beta_hat, w_hat, R, eps_q, delta_q, budget,
                                    rng, mode, sigma2=sigma2))
    return out
