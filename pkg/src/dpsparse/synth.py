"""Synthetic Gaussian designs: Toeplitz/AR(1), blocked equi-correlation, identity."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .mechanisms import InvalidParameterError
from .regression import Dataset

COVARIANCES = ("toeplitz", "blocked", "identity")
BLOCK = 4


@dataclass(frozen=True)
class DesignSpec:
    """One simulation design.

    ``support`` is "prefix" (the first s0 coordinates) or "random" (s0 drawn
    without replacement); ``signal`` is "fixed" (every active coefficient
    equals ``amplitude``) or "gaussian" (active coefficients drawn from
    N(0, amplitude), amplitude being a variance). Entries of X are truncated
    to [-cx, cx] unless ``cx`` is None.
    """

    n: int
    p: int
    covariance: str = "toeplitz"
    rho: float = 0.0
    s0: int = 3
    support: str = "prefix"
    signal: str = "fixed"
    amplitude: float = 1.0
    sigma: float = 1.0
    cx: float | None = 6.0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise InvalidParameterError("n and p must be positive")
        if self.covariance not in COVARIANCES:
            raise InvalidParameterError(f"unknown covariance {self.covariance!r}")
        if self.covariance == "toeplitz" and not abs(self.rho) < 1:
            raise InvalidParameterError(f"Toeplitz design needs |rho| < 1, got {self.rho}")
        if self.covariance == "blocked" and not 0 <= self.rho < 1:
            raise InvalidParameterError(f"blocked design needs rho in [0, 1), got {self.rho}")
        if not 0 <= self.s0 <= self.p:
            raise InvalidParameterError(f"s0={self.s0} must lie in [0, p]")
        if self.support not in ("prefix", "random"):
            raise InvalidParameterError(f"unknown support pattern {self.support!r}")
        if self.signal not in ("fixed", "gaussian"):
            raise InvalidParameterError(f"unknown signal kind {self.signal!r}")
        if self.sigma < 0:
            raise InvalidParameterError("sigma must be non-negative")
        if self.cx is not None and not self.cx > 0:
            raise InvalidParameterError("cx must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> DesignSpec:
        return DesignSpec(**{**asdict(self), **kw})


def population_covariance(spec: DesignSpec) -> np.ndarray:
    p = spec.p
    idx = np.arange(p)
    if spec.covariance == "identity":
        return np.eye(p)
    if spec.covariance == "toeplitz":
        return spec.rho ** np.abs(idx[:, None] - idx[None, :])
    same = (idx[:, None] // BLOCK) == (idx[None, :] // BLOCK)
    S = np.where(same, spec.rho, 0.0)
    np.fill_diagonal(S, 1.0)
    return S


def draw_design(spec: DesignSpec, rng: np.random.Generator) -> np.ndarray:
    n, p, rho = spec.n, spec.p, spec.rho
    Z = rng.standard_normal((n, p))
    if spec.covariance == "toeplitz" and rho != 0.0:
        # stationary AR(1) across columns: x_k = rho x_{k-1} + sqrt(1 - rho^2) z_k
        a = math.sqrt(1.0 - rho * rho)
        X = np.empty_like(Z)
        X[:, 0] = Z[:, 0]
        for k in range(1, p):
            X[:, k] = rho * X[:, k - 1] + a * Z[:, k]
    elif spec.covariance == "blocked" and rho != 0.0:
        # shared factor per block of 4 gives corr rho inside the block
        nb = -(-p // BLOCK)
        F = rng.standard_normal((n, nb))
        X = math.sqrt(rho) * np.repeat(F, BLOCK, axis=1)[:, :p] + math.sqrt(1 - rho) * Z
    else:
        X = Z
    if spec.cx is not None:
        np.clip(X, -spec.cx, spec.cx, out=X)
    return X


def draw_coefficients(spec: DesignSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if spec.support == "prefix":
        S = np.arange(spec.s0)
    else:
        S = np.sort(rng.choice(spec.p, size=spec.s0, replace=False))
    beta = np.zeros(spec.p)
    if spec.signal == "fixed":
        beta[S] = spec.amplitude
    else:
        beta[S] = math.sqrt(spec.amplitude) * rng.standard_normal(S.size)
    return beta, S


def draw_response(X: np.ndarray, beta: np.ndarray, sigma: float,
                  rng: np.random.Generator) -> np.ndarray:
    return X @ beta + sigma * rng.standard_normal(X.shape[0])


def generate(spec: DesignSpec, rng: np.random.Generator) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Draw (dataset, beta, support) for ``spec``; y = X beta + N(0, sigma^2) errors."""
    X = draw_design(spec, rng)
    beta, S = draw_coefficients(spec, rng)
    y = draw_response(X, beta, spec.sigma, rng)
    return Dataset(X, y), beta, S


def dump_csv(data: Dataset, path, target: str = "y") -> None:
    """Write a header row then one line per observation, response last."""
    path = Path(path)
    header = [f"x{j}" for j in range(data.p)] + [target]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for xi, yi in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
