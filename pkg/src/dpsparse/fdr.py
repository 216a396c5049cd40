"""Private FDR control with mirror statistics over a two-way data split."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .mechanisms import (
    InvalidParameterError,
    NoiseMode,
    PrivacyBudget,
    clip_scalar,
    gaussian_noise,
    gaussian_std,
)
from .regression import Dataset, IhtConfig, adaptive_dp_regression

COND_LIMIT = 1e12


class MirrorKind(enum.Enum):
    MIN_TWICE = "min"
    PRODUCT = "product"
    SUM = "sum"


class DegenerateRefitError(RuntimeError):
    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"noised Gram matrix is numerically singular (condition {cond:.3g})")


@dataclass(frozen=True)
class MirrorConfig:
    f_kind: MirrorKind = MirrorKind.MIN_TWICE
    q: float = 0.1
    B1: float = 1.0
    B2: float = 1.0

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise InvalidParameterError(f"q must lie in (0, 1), got {self.q}")
        if not (self.B1 > 0 and self.B2 > 0):
            raise InvalidParameterError("B1 and B2 must be positive")


def noise_bounds(n: int, cx: float, R: float, K_A: int) -> tuple[float, float]:
    """Smallest (B1, B2) with privacy: 4 K_A cx^2 / n and 4 R sqrt(K_A) cx / n."""
    return 4 * K_A * cx * cx / n, 4 * R * math.sqrt(K_A) * cx / n


@dataclass
class FdrSelection:
    support_A: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    mirrors: np.ndarray
    tau: float
    selected: np.ndarray
    fdp: float | None = None
    power: float | None = None
    flags: list[str] = field(default_factory=list)

    def to_row(self, run_id=0) -> dict:
        return {
            "run_id": run_id,
            "size_A": int(self.support_A.size),
            "tau": self.tau,
            "n_selected": int(self.selected.size),
            "fdp": "" if self.fdp is None else self.fdp,
            "power": "" if self.power is None else self.power,
            "flags": ";".join(self.flags),
        }


def mirror_statistic(u, v, f_kind: MirrorKind = MirrorKind.MIN_TWICE):
    """sign(u v) f(|u|, |v|); zero whenever either argument is zero."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    a, b = np.abs(u), np.abs(v)
    if f_kind is MirrorKind.MIN_TWICE:
        f = 2.0 * np.minimum(a, b)
    elif f_kind is MirrorKind.PRODUCT:
        f = a * b
    elif f_kind is MirrorKind.SUM:
        f = a + b
    else:
        raise InvalidParameterError(f"unknown mirror kind {f_kind!r}")
    out = np.sign(u * v) * f
    return float(out) if out.ndim == 0 else out


def mirror_cutoff(mirrors, q: float) -> tuple[float, np.ndarray]:
    """Data-driven threshold and the indices with M_j strictly above it.

    The ratio #{M < -t} / max(#{M > t}, 1) is a right-continuous step function
    that only moves at the distinct |M_j|, so scanning those values from the
    smallest up finds the minimal qualifying t. Returns (inf, empty) when no
    candidate qualifies.
    """
    if not 0 < q < 1:
        raise InvalidParameterError(f"q must lie in (0, 1), got {q}")
    M = np.asarray(mirrors, dtype=float)
    ts = np.unique(np.abs(M))
    ts = ts[ts > 0]
    if ts.size == 0:
        return math.inf, np.empty(0, dtype=np.intp)
    neg = np.sort(-M[M < 0])  # magnitudes of negative mirrors
    pos = np.sort(M[M > 0])
    # counts of M < -t and M > t for every candidate t
    n_neg = neg.size - np.searchsorted(neg, ts, side="right")
    n_pos = pos.size - np.searchsorted(pos, ts, side="right")
    ok = n_neg / np.maximum(n_pos, 1) <= q
    if not ok.any():
        return math.inf, np.empty(0, dtype=np.intp)
    tau = float(ts[np.argmax(ok)])
    return tau, np.flatnonzero(M > tau)


def ols_noise_std(B: float, epsilon: float, delta: float) -> float:
    """Gaussian std for a sufficient statistic with bound B on the (epsilon, delta) slice."""
    return gaussian_std(B, epsilon, delta)


def dp_ols_on_support(data2: Dataset, A, R: float, B1: float, B2: float, epsilon: float,
                      delta: float, rng: np.random.Generator, budget: PrivacyBudget | None = None,
                      mode: NoiseMode = NoiseMode.CALIBRATED) -> np.ndarray:
    """Least squares on the columns ``A`` from noised sufficient statistics.

    Gram X_A'X_A/n2 gets a symmetric Gaussian perturbation (upper triangle drawn,
    mirrored) of std :func:`ols_noise_std` (B1), the cross moment X_A' clip(y)/n2
    one of std (B2). Raises :class:`DegenerateRefitError` if the noised Gram is
    numerically singular.
    """
    A = np.asarray(A, dtype=np.intp)
    n2 = data2.n
    a = A.size
    if a == 0:
        return np.empty(0)
    if a >= n2:
        raise InvalidParameterError(f"support size {a} must be below the sample size {n2}")
    if budget is not None:
        budget.charge(epsilon, delta, "dp_ols")
    XA = data2.X[:, A]
    G = XA.T @ XA / n2
    c = XA.T @ clip_scalar(data2.y, R) / n2
    iu = np.triu_indices(a)
    upper = gaussian_noise(ols_noise_std(B1, epsilon, delta), iu[0].size, rng, mode)
    N = np.zeros((a, a))
    N[iu] = upper
    N = N + np.triu(N, 1).T
    G = G + N
    assert np.array_equal(G, G.T), "noised Gram lost symmetry"
    c = c + gaussian_noise(ols_noise_std(B2, epsilon, delta), a, rng, mode)
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DegenerateRefitError(float(cond))
    return np.linalg.solve(G, c)


def split_halves(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random halves; the first gets the extra row when n is odd."""
    if n < 2:
        raise InvalidParameterError("need at least two rows to split")
    perm = rng.permutation(n)
    n1 = (n + 1) // 2
    return perm[:n1], perm[n1:]


def score_selection(selected, truth) -> tuple[float, float]:
    """(FDP, power) of ``selected`` against the true support."""
    sel = set(int(i) for i in selected)
    tru = set(int(i) for i in truth)
    fdp = len(sel - tru) / max(len(sel), 1)
    power = len(sel & tru) / len(tru) if tru else 0.0
    return fdp, power


def finish_selection(A, beta1, beta2, mirror_cfg: MirrorConfig, truth=None,
                     flags=None) -> FdrSelection:
    mirrors = mirror_statistic(beta1, beta2, mirror_cfg.f_kind)
    mirrors = np.atleast_1d(mirrors)
    tau, local = mirror_cutoff(mirrors, mirror_cfg.q) if A.size else (math.inf, np.empty(0, int))
    selected = A[local]
    if math.isfinite(tau):
        ratio = np.sum(mirrors < -tau) / max(int(np.sum(mirrors > tau)), 1)
        assert ratio <= mirror_cfg.q, "cutoff violates the ratio constraint"
    out = FdrSelection(support_A=A, beta1=beta1, beta2=beta2, mirrors=mirrors, tau=tau,
                       selected=selected, flags=list(flags or []))
    if truth is not None:
        out.fdp, out.power = score_selection(selected, truth)
    return out


def dp_fdr_pipeline(data: Dataset, beta_cfg: IhtConfig, mirror_cfg: MirrorConfig,
                    budget: PrivacyBudget, rng: np.random.Generator, truth=None,
                    c0: float = 1.0) -> FdrSelection:
    """Private selection with FDR control.

    Half 1 runs adaptive private regression on (eps/2, delta/2) to get the
    candidate set A; half 2 refits A by noised least squares on the other
    (eps/2, delta/2); mirror statistics and the cutoff follow. A degenerate
    refit returns an empty selection flagged ``degenerate_refit``.
    """
    if budget.spent_epsilon or budget.spent_delta:
        raise InvalidParameterError("FDR pipeline needs a fresh budget")
    eps2, delta2 = budget.epsilon / 2, budget.delta / 2
    i1, i2 = split_halves(data.n, rng)
    d1, d2 = data.rows(i1), data.rows(i2)
    fit = adaptive_dp_regression(d1, budget.split(eps2, delta2, "stage1"), beta_cfg, c0, rng)
    A = np.flatnonzero(fit.beta)
    if A.size == 0:
        budget.charge(eps2, delta2, "dp_ols(skipped)")
        return finish_selection(A, np.empty(0), np.empty(0), mirror_cfg, truth, ["stage1_empty"])
    try:
        beta2 = dp_ols_on_support(d2, A, beta_cfg.R, mirror_cfg.B1, mirror_cfg.B2, eps2, delta2,
                                  rng, budget, beta_cfg.noise_mode)
    except DegenerateRefitError as err:
        empty = np.empty(0, dtype=np.intp)
        out = FdrSelection(support_A=A, beta1=fit.beta[A], beta2=np.full(A.size, np.nan),
                           mirrors=np.full(A.size, np.nan), tau=math.inf, selected=empty,
                           flags=[f"degenerate_refit:{err.cond:.3g}"])
        if truth is not None:
            out.fdp, out.power = score_selection(empty, truth)
        return out
    return finish_selection(A, fit.beta[A], beta2, mirror_cfg, truth)
