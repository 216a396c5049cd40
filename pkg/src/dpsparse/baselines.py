"""Non-private reference procedures.

Lasso, OLS, the node-wise debiased Lasso interval and the data-splitting
mirror-statistic FDR procedure. They serve both as comparison columns in the
benchmarks and as oracles for the zero-noise tests of the private code.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import Lasso, LassoCV
from sklearn.model_selection import KFold

from .fdr import (
    FdrSelection,
    MirrorConfig,
    MirrorKind,
    finish_selection,
    score_selection,
    split_halves,
)
from .inference import z_quantile
from .mechanisms import InvalidParameterError
from .regression import Dataset, bic_penalty, compute_K


@dataclass(frozen=True)
class LassoConfig:
    """``lam=None`` picks lambda by K-fold CV over ``n_grid`` log-spaced values."""

    lam: float | None = None
    max_iter: int = 10_000
    tol: float = 1e-6
    n_folds: int = 5
    n_grid: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidParameterError("tol must be positive")
        if self.lam is not None and self.lam < 0:
            raise InvalidParameterError("lambda must be non-negative")


@dataclass
class LassoResult:
    beta: np.ndarray
    lam: float
    kkt_residual: float
    converged: bool


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    return float(np.max(np.abs(X.T @ y)) / X.shape[0])


def kkt_residual(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """Largest violation of the optimality conditions of 0.5||y - Xb||^2/n + lam||b||_1."""
    g = X.T @ (y - X @ beta) / X.shape[0]
    nz = beta != 0
    viol = np.empty_like(g)
    viol[nz] = np.abs(g[nz] - lam * np.sign(beta[nz]))
    viol[~nz] = np.maximum(np.abs(g[~nz]) - lam, 0.0)
    return float(viol.max()) if viol.size else 0.0


def _cv_lambda(X, y, cfg: LassoConfig) -> float:
    lmax = lambda_max(X, y)
    if lmax == 0.0:
        return 0.0
    grid = np.geomspace(lmax, lmax * 1e-3, cfg.n_grid)
    folds = KFold(n_splits=cfg.n_folds, shuffle=True, random_state=cfg.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        cv = LassoCV(alphas=grid, cv=folds, fit_intercept=False, max_iter=cfg.max_iter,
                     tol=cfg.tol).fit(X, y)
    return float(cv.alpha_)


def _lasso_fit(X: np.ndarray, y: np.ndarray, cfg: LassoConfig) -> LassoResult:
    lam = _cv_lambda(X, y, cfg) if cfg.lam is None else cfg.lam
    if lam == 0.0:
        beta = ols_beta(X, y)
    elif lam >= lambda_max(X, y):
        beta = np.zeros(X.shape[1])
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            # tight duality gap so that the KKT check below is meaningful
            model = Lasso(alpha=lam, fit_intercept=False, max_iter=cfg.max_iter,
                          tol=cfg.tol * 1e-3).fit(X, y)
        beta = model.coef_.astype(float)
    kkt = kkt_residual(X, y, beta, lam)
    return LassoResult(beta=beta, lam=lam, kkt_residual=kkt, converged=kkt <= cfg.tol)


def lasso(data: Dataset, cfg: LassoConfig = LassoConfig()) -> LassoResult:
    """Coordinate-descent Lasso; ``converged`` is False if the KKT residual exceeds tol."""
    res = _lasso_fit(data.X, data.y, cfg)
    if not res.converged:
        warnings.warn(f"lasso KKT residual {res.kkt_residual:.3g} above tol {cfg.tol}",
                      ConvergenceWarning, stacklevel=2)
    return res


def ols_beta(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    scale = max(1.0, float(np.abs(X).max() ** 2 * X.shape[0] * max(np.abs(beta).max(), 1.0)))
    assert np.max(np.abs(X.T @ (y - X @ beta))) <= 1e-8 * scale, "normal equations not met"
    return beta


def ols(data: Dataset) -> np.ndarray:
    return ols_beta(data.X, data.y)


@dataclass
class DebiasedLassoResult:
    j: int
    point: float
    lo: float
    hi: float
    se: float
    sigma2: float
    beta_hat_j: float


def nodewise_row(X: np.ndarray, j: int, cfg: LassoConfig) -> np.ndarray:
    """Row j of the node-wise precision estimate: regress x_j on the other columns."""
    n, p = X.shape
    others = np.delete(np.arange(p), j)
    fit = _lasso_fit(X[:, others], X[:, j], cfg)
    gamma = fit.beta
    resid = X[:, j] - X[:, others] @ gamma
    tau2 = float(resid @ X[:, j]) / n  # equals ||resid||^2/n + lam ||gamma||_1 at the optimum
    theta = np.zeros(p)
    theta[j] = 1.0
    theta[others] = -gamma
    return theta / tau2


def classical_debias(data: Dataset, beta: np.ndarray, theta_j: np.ndarray, j: int) -> float:
    """beta_j + theta_j' X'(y - X beta) / n."""
    return float(beta[j] + theta_j @ (data.X.T @ (data.y - data.X @ beta)) / data.n)


def debiased_lasso_ci(data: Dataset, j: int, alpha: float, cfg: LassoConfig = LassoConfig(),
                      nodewise_cfg: LassoConfig | None = None,
                      fit: LassoResult | None = None) -> DebiasedLassoResult:
    """Node-wise debiased Lasso interval for beta_j with plug-in variance.

    ``fit`` lets several coordinates share one Lasso fit of the response.
    """
    if not 0 <= j < data.p:
        raise InvalidParameterError(f"column index {j} out of range for p={data.p}")
    z = z_quantile(alpha)
    X, y, n = data.X, data.y, data.n
    if fit is None:
        fit = _lasso_fit(X, y, cfg)
    beta = fit.beta
    theta = nodewise_row(X, j, nodewise_cfg or cfg)
    point = classical_debias(data, beta, theta, j)
    resid = y - X @ beta
    dof = max(n - int(np.count_nonzero(beta)), 1)
    sigma2 = float(resid @ resid) / dof
    Xt = X @ theta
    var = sigma2 * float(Xt @ Xt) / n / n
    se = math.sqrt(max(var, 0.0))
    return DebiasedLassoResult(j=j, point=point, lo=point - z * se, hi=point + z * se, se=se,
                               sigma2=sigma2, beta_hat_j=float(beta[j]))


def _top_s(v: np.ndarray, s: int) -> np.ndarray:
    keep = np.argsort(-np.abs(v), kind="stable")[:s]
    out = np.zeros_like(v)
    out[keep] = v[keep]
    return out


def nonprivate_iht_bic(data: Dataset, eta0: float, T: int, R: float, C: float, c0: float,
                       epsilon: float, delta: float, rng: np.random.Generator,
                       K: int | None = None, K_max: int = 12, log_base: float = math.e):
    """Plain IHT over the sparsity doublings with a noiseless BIC choice.

    Same split draw and penalty as the private version (epsilon and delta only
    enter the penalty), so it reproduces the private fit when noise is off.
    Returns (beta, k).
    """
    n, p = data.n, data.p
    K = compute_K(n, p, log_base, K, K_max)
    perm = rng.permutation(n)
    parts = np.array_split(perm, T)
    cy = np.clip(data.y, -R, R)
    best = None
    for k in range(K + 1):
        b = np.zeros(p)
        for idx in parts:
            Xt = data.X[idx]
            r = np.clip(Xt @ b, -R, R) - cy[idx]
            b = _top_s(b - eta0 / len(idx) * (Xt.T @ r), 2 ** k)
            nb = np.linalg.norm(b)
            if nb > C:
                b = b * (C / nb)
        rss = float(np.sum((cy - np.clip(data.X @ b, -R, R)) ** 2))
        score = rss + bic_penalty(k, n, p, epsilon, delta, c0)
        if best is None or score < best[0]:
            best = (score, b, k)
    return best[1], best[2]


def nonprivate_mirror_fdr(data: Dataset, q: float, f_kind: MirrorKind, rng: np.random.Generator,
                          truth=None, selector: str = "lasso",
                          lasso_cfg: LassoConfig = LassoConfig(), iht: dict | None = None,
                          R: float | None = None) -> FdrSelection:
    """Data-splitting mirror FDR without privacy noise.

    Stage 1 on the first half is a CV Lasso (``selector="lasso"``) or the plain
    IHT/BIC fit (``selector="iht"``, keyword arguments in ``iht``); stage 2
    is least squares on the second half over the stage-1 support. ``R``
    optionally clips the second-half responses, as the private refit does.
    """
    cfg = MirrorConfig(f_kind=f_kind, q=q)
    i1, i2 = split_halves(data.n, rng)
    d1, d2 = data.rows(i1), data.rows(i2)
    if selector == "lasso":
        beta1 = _lasso_fit(d1.X, d1.y, lasso_cfg).beta
    elif selector == "iht":
        beta1, _ = nonprivate_iht_bic(d1, rng=rng, **(iht or {}))
    else:
        raise InvalidParameterError(f"unknown selector {selector!r}")
    A = np.flatnonzero(beta1)
    if A.size == 0:
        return finish_selection(A, np.empty(0), np.empty(0), cfg, truth, ["stage1_empty"])
    if A.size >= d2.n:
        empty = np.empty(0, dtype=np.intp)
        out = FdrSelection(support_A=A, beta1=beta1[A], beta2=np.full(A.size, np.nan),
                           mirrors=np.full(A.size, np.nan), tau=math.inf, selected=empty,
                           flags=["degenerate_refit"])
        if truth is not None:
            out.fdp, out.power = score_selection(empty, truth)
        return out
    y2 = d2.y if R is None else np.clip(d2.y, -R, R)
    beta2 = ols_beta(d2.X[:, A], y2)
    return finish_selection(A, beta1[A], beta2, cfg, truth)
