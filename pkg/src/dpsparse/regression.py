"""Differentially private sparse linear regression.

Fixed-sparsity private IHT over disjoint data splits, and the adaptive
variant that fits sparsity candidates ``s = 2**k`` and picks one with a
noisy BIC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mechanisms import (
    InvalidParameterError,
    NoiseMode,
    PrivacyBudget,
    clip_scalar,
    laplace_noise,
    project_l2,
)
from .noisy_ht import NoisyHtParams, noisy_hard_threshold

_NORM_TOL = 1e-9


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise InvalidParameterError(f"X must be a matrix, got shape {self.X.shape}")
        n, p = self.X.shape
        if n < 1 or p < 1:
            raise InvalidParameterError(f"empty design of shape {self.X.shape}")
        if self.y.shape != (n,):
            raise InvalidParameterError(f"y has shape {self.y.shape}, expected ({n},)")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise InvalidParameterError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def rows(self, idx) -> Dataset:
        return Dataset(self.X[idx], self.y[idx])


@dataclass
class IhtConfig:
    """Tuning for one private IHT run.

    ``K`` forces the number of sparsity doublings in adaptive mode; when None
    it comes from floor(log2(sqrt(n) / log(p)**2)) with the logarithm taken in
    ``log_base``. ``gradient_sign`` only matters for precision-column fits.
    """

    eta0: float
    T: int
    R: float
    C: float
    B: float
    noise_mode: NoiseMode = NoiseMode.CALIBRATED
    K: int | None = None
    K_max: int = 12
    log_base: float = math.e
    cx: float | None = None
    gradient_sign: str = "descent"

    def __post_init__(self):
        if not self.eta0 > 0:
            raise InvalidParameterError(f"eta0 must be positive, got {self.eta0}")
        if self.T < 1:
            raise InvalidParameterError(f"T must be >= 1, got {self.T}")
        if not (self.R > 0 and self.C > 0):
            raise InvalidParameterError("R and C must be positive")
        if self.B < 0:
            raise InvalidParameterError(f"B must be non-negative, got {self.B}")
        if self.gradient_sign not in ("descent", "literal"):
            raise InvalidParameterError(f"unknown gradient_sign {self.gradient_sign!r}")

    def with_(self, **kw) -> IhtConfig:
        return replace(self, **kw)


def default_T(n: int) -> int:
    return max(1, int(math.ceil(math.log(n))))


def regression_config(n: int, sigma: float, cx: float, C: float, *, eta0: float = 0.5,
                      T: int | None = None, **kw) -> IhtConfig:
    """Tuning following the estimation error theorem.

    R = sigma*sqrt(2 log n) and B = 2(R + C*cx)*cx, reading the bound on
    ||beta||_2 as the feasibility radius C.
    """
    R = sigma * math.sqrt(2 * math.log(n))
    B = 2 * (R + C * cx) * cx
    return IhtConfig(eta0=eta0, T=T or default_T(n), R=R, C=C, B=B, cx=cx, **kw)


@dataclass
class SparseEstimate:
    beta: np.ndarray
    support: np.ndarray
    k: int = -1
    bic_value: float | None = None
    candidates: list = field(default_factory=list, repr=False)

    @classmethod
    def from_beta(cls, beta: np.ndarray, k: int = -1, bic_value=None) -> SparseEstimate:
        beta = np.asarray(beta, dtype=float)
        return cls(beta=beta, support=np.flatnonzero(beta), k=k, bic_value=bic_value)

    def to_record(self) -> dict:
        return {
            "k": self.k,
            "support": " ".join(str(int(i)) for i in self.support),
            "values": " ".join(repr(float(v)) for v in self.beta[self.support]),
            "bic_value": "" if self.bic_value is None else repr(float(self.bic_value)),
        }


def split_rows(n: int, T: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Random partition of range(n) into T near-equal parts.

    The first n % T parts carry one extra row.
    """
    if T < 1 or T > n:
        raise InvalidParameterError(f"need 1 <= T <= n, got T={T}, n={n}")
    perm = rng.permutation(n)
    parts = np.array_split(perm, T)
    return parts


def clipped_gradient(beta: np.ndarray, X: np.ndarray, y: np.ndarray, eta0: float,
                     R: float) -> np.ndarray:
    """Half-step beta - eta0/m * sum_i (clip(x_i'beta) - clip(y_i)) x_i over the m given rows."""
    m = X.shape[0]
    if m == 0:
        raise InvalidParameterError("gradient over an empty slice")
    resid = clip_scalar(X @ beta, R) - clip_scalar(y, R)
    return beta - (eta0 / m) * (X.T @ resid)


def _check_iterate(beta: np.ndarray, s: int, C: float) -> None:
    assert np.count_nonzero(beta) <= s, "iterate exceeds target sparsity"
    assert np.linalg.norm(beta) <= C * (1 + _NORM_TOL), "iterate left the feasibility ball"


def _iht_loop(data: Dataset, s: int, step_eps: float, step_delta: float, cfg: IhtConfig,
              splits: list[np.ndarray], beta0: np.ndarray, rng: np.random.Generator,
              budget: PrivacyBudget, grad_step, tag: str) -> np.ndarray:
    """Shared private IHT loop; ``grad_step(beta, X_t, y_t)`` produces the half-step."""
    n, p = data.n, data.p
    if s > p:
        raise InvalidParameterError(f"sparsity {s} exceeds dimension {p}")
    params = NoisyHtParams(s=s, epsilon=step_eps, delta=step_delta, lam=cfg.eta0 * cfg.B / n)
    beta = np.asarray(beta0, dtype=float).copy()
    for t, idx in enumerate(splits):
        half = grad_step(beta, data.X[idx], data.y[idx])
        budget.charge(step_eps, step_delta, f"{tag}:s={s}:t={t}")
        sel = noisy_hard_threshold(half, params, rng, cfg.noise_mode)
        beta = project_l2(sel.dense, cfg.C)
        _check_iterate(beta, s, cfg.C)
    return beta


def _check_splits(splits: list[np.ndarray], n: int) -> None:
    allrows = np.concatenate(splits)
    assert allrows.size == n and np.array_equal(np.sort(allrows), np.arange(n)), \
        "splits must partition the rows"
    assert all(len(s) > 0 for s in splits), "empty split"


def dp_iht_fixed_sparsity(data: Dataset, s: int, epsilon: float, delta: float, cfg: IhtConfig,
                          rng: np.random.Generator, beta0: np.ndarray | None = None,
                          budget: PrivacyBudget | None = None,
                          splits: list[np.ndarray] | None = None) -> SparseEstimate:
    """Private IHT at known sparsity, each of the T steps spending (epsilon/T, delta/T)."""
    if budget is None:
        budget = PrivacyBudget(epsilon, delta)
    if splits is None:
        splits = split_rows(data.n, cfg.T, rng)
    _check_splits(splits, data.n)
    T = len(splits)
    if beta0 is None:
        beta0 = np.zeros(data.p)
    step = lambda b, X, y: clipped_gradient(b, X, y, cfg.eta0, cfg.R)  # noqa: E731
    beta = _iht_loop(data, s, epsilon / T, delta / T, cfg, splits, beta0, rng, budget,
                     step, "iht")
    return SparseEstimate.from_beta(beta)


def bic_penalty(k: int, n: int, p: int, epsilon: float, delta: float, c0: float,
                n_power: int = 1) -> float:
    """c0 * {log p log n 2^k + log^2 p 4^k log(1/delta) log^7 n / (n^n_power eps^2)}."""
    lp, ln = math.log(p), math.log(n)
    priv = lp ** 2 * 4.0 ** k * math.log(1 / delta) * ln ** 7 / (n ** n_power * epsilon ** 2)
    return c0 * (lp * ln * 2.0 ** k + priv)


def dp_bic_select(data: Dataset, candidates: list[SparseEstimate], epsilon: float, delta: float,
                  R: float, c0: float, K: int, rng: np.random.Generator,
                  budget: PrivacyBudget | None = None,
                  mode: NoiseMode = NoiseMode.CALIBRATED) -> SparseEstimate:
    """Noisy-argmin BIC over the candidate fits.

    Spends epsilon/(K+2) through Laplace noise of scale 2(4R)^2 (K+2)/epsilon
    on each score.
    """
    if not candidates:
        raise InvalidParameterError("no candidate estimates to select from")
    if budget is None:
        budget = PrivacyBudget(epsilon, delta)
    n, p = data.n, data.p
    cy = clip_scalar(data.y, R)
    scale = 2 * (4 * R) ** 2 * (K + 2) / epsilon
    budget.charge(epsilon / (K + 2), 0.0, "bic")
    z = laplace_noise(scale, len(candidates), rng, mode)
    scores = np.empty(len(candidates))
    for i, cand in enumerate(candidates):
        rss = float(np.sum((cy - clip_scalar(data.X @ cand.beta, R)) ** 2))
        scores[i] = rss + bic_penalty(cand.k, n, p, epsilon, delta, c0) + z[i]
    best = int(np.argmin(scores))
    chosen = candidates[best]
    return SparseEstimate(beta=chosen.beta, support=chosen.support, k=chosen.k,
                          bic_value=float(scores[best]), candidates=list(candidates))


def compute_K(n: int, p: int, log_base: float = math.e, forced: int | None = None,
              K_max: int = 12) -> int:
    """Largest doubling exponent, floor(log2(sqrt(n) / log(p)^2)), clamped.

    Raises when the formula goes negative and nothing is forced; the caller
    should then use fixed-sparsity mode or force K.
    """
    if forced is not None:
        K = int(forced)
        if K < 0:
            raise InvalidParameterError(f"forced K must be >= 0, got {K}")
    else:
        lp = math.log(p) / math.log(log_base) if p > 1 else 0.0
        if lp == 0.0:
            K = K_max
        else:
            K = math.floor(math.log2(math.sqrt(n) / lp ** 2))
        if K < 0:
            raise InvalidParameterError(
                f"K = floor(log2(sqrt({n})/log^2({p}))) = {K} < 0: the sample is too small for "
                "adaptive sparsity search; use fixed-sparsity mode or force K"
            )
    # candidates with 2^k > p are dropped, so the doubling range ends at log2 p
    return min(K, K_max, int(math.floor(math.log2(p))))


def adaptive_dp_regression(data: Dataset, budget: PrivacyBudget, cfg: IhtConfig, c0: float,
                           rng: np.random.Generator,
                           beta0: np.ndarray | None = None) -> SparseEstimate:
    """Private sparse regression with DP-BIC choice of the sparsity level.

    Spends exactly (budget.epsilon, budget.delta): each of the T(K+1) IHT steps
    costs (eps/{T(K+2)}, delta/{T(K+1)}) and the BIC selection eps/(K+2).
    """
    if budget.spent_epsilon or budget.spent_delta:
        raise InvalidParameterError("adaptive regression needs a fresh budget")
    if cfg.cx is not None and cfg.B < 4 * cfg.R * cfg.cx:
        raise InvalidParameterError(
            f"B = {cfg.B} is below the privacy floor 4*R*cx = {4 * cfg.R * cfg.cx}")
    eps, delta = budget.epsilon, budget.delta
    n, p = data.n, data.p
    K = compute_K(n, p, cfg.log_base, cfg.K, cfg.K_max)
    splits = split_rows(n, cfg.T, rng)
    _check_splits(splits, n)
    T = len(splits)
    if beta0 is None:
        beta0 = np.zeros(p)
    step_eps = eps / (T * (K + 2))
    step_delta = delta / (T * (K + 1))
    step = lambda b, X, y: clipped_gradient(b, X, y, cfg.eta0, cfg.R)  # noqa: E731
    candidates = []
    for k in range(K + 1):
        beta = _iht_loop(data, 2 ** k, step_eps, step_delta, cfg, splits, beta0, rng, budget,
                         step, "iht")
        candidates.append(SparseEstimate.from_beta(beta, k=k))
    return dp_bic_select(data, candidates, eps, delta, cfg.R, c0, K, rng, budget,
                         cfg.noise_mode)
