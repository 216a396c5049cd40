"""Peeling-based noisy hard thresholding (private top-s selection)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mechanisms import InvalidParameterError, NoiseMode, laplace_noise


@dataclass(frozen=True)
class NoisyHtParams:
    s: int
    epsilon: float
    delta: float
    lam: float

    def __post_init__(self):
        if self.s < 1:
            raise InvalidParameterError(f"sparsity s must be >= 1, got {self.s}")
        if not self.epsilon > 0:
            raise InvalidParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise InvalidParameterError(f"delta must lie strictly in (0, 1), got {self.delta}")
        if self.lam < 0:
            raise InvalidParameterError(f"lambda must be non-negative, got {self.lam}")

    @property
    def noise_scale(self) -> float:
        return self.lam * 2.0 * math.sqrt(3.0 * self.s * math.log(1.0 / self.delta)) / self.epsilon


@dataclass
class SparseSelection:
    support: np.ndarray  # selection order
    values: np.ndarray
    dense: np.ndarray


def noisy_hard_threshold(xi: np.ndarray, params: NoisyHtParams, rng: np.random.Generator,
                         mode: NoiseMode = NoiseMode.CALIBRATED) -> SparseSelection:
    """Privately report the s largest-magnitude coordinates of ``xi``.

    Each of the s peeling rounds perturbs every |xi_j| with fresh Laplace noise
    and takes the argmax among coordinates not yet chosen (lowest index wins
    ties). The chosen values are released with one more round of Laplace
    noise at the same scale. The result is (epsilon, delta)-DP whenever
    ``xi`` changes by at most ``lam`` in sup-norm between neighbouring datasets.
    """
    xi = np.asarray(xi, dtype=float)
    d = xi.shape[0]
    s = params.s
    if s > d:
        raise InvalidParameterError(f"cannot select s={s} coordinates from a {d}-vector")

    scale = params.noise_scale
    noisy = mode is NoiseMode.CALIBRATED and scale > 0
    score = np.abs(xi)
    available = np.ones(d, dtype=bool)
    support = np.empty(s, dtype=np.intp)
    for i in range(s):
        if noisy:
            cand = score + laplace_noise(scale, d, rng)
        else:
            cand = score.copy()
        cand[~available] = -np.inf
        j = int(np.argmax(cand))
        support[i] = j
        available[j] = False

    values = xi[support]
    if noisy:
        values = values + laplace_noise(scale, s, rng)
    dense = np.zeros(d)
    dense[support] = values
    return SparseSelection(support=support, values=values, dense=dense)
