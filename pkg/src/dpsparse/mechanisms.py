"""Noise primitives, clipping operators and privacy-budget accounting.

Every randomized routine in the package draws its noise through
:func:`laplace_noise` or :func:`gaussian_noise` so that ``NoiseMode.DISABLED``
turns a whole pipeline into its deterministic, non-private counterpart.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

BUDGET_SLACK = 1e-12


class InvalidParameterError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class BudgetExceededError(RuntimeError):
    """Raised when a charge would push spent epsilon or delta past its cap."""

    def __init__(self, which: str, spent: float, cost: float, cap: float):
        self.which = which
        self.spent = spent
        self.cost = cost
        self.cap = cap
        super().__init__(
            f"privacy budget exceeded on {which}: spent {spent!r} + cost {cost!r} > cap {cap!r}"
        )


class NoiseMode(enum.Enum):
    CALIBRATED = "calibrated"
    # non-private; exists for oracle tests only
    DISABLED = "disabled"


@dataclass(frozen=True)
class ClipLevel:
    R: float
    C: float

    def __post_init__(self):
        if not (self.R > 0 and self.C > 0):
            raise InvalidParameterError(f"clip levels must be positive, got R={self.R}, C={self.C}")


@dataclass
class PrivacyBudget:
    """An (epsilon, delta) cap with additive spend tracking.

    Child budgets created with :meth:`split` forward every charge to their
    parent, so a pipeline can hand each stage its own slice while the
    top-level object still sees the full tally.
    """

    epsilon: float
    delta: float
    label: str = ""
    parent: PrivacyBudget | None = field(default=None, repr=False)
    charges: list[tuple[str, float, float]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise InvalidParameterError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def spent_epsilon(self) -> float:
        return math.fsum(c[1] for c in self.charges)

    @property
    def spent_delta(self) -> float:
        return math.fsum(c[2] for c in self.charges)

    @property
    def remaining(self) -> tuple[float, float]:
        return self.epsilon - self.spent_epsilon, self.delta - self.spent_delta

    def _check(self, eps_cost: float, delta_cost: float) -> None:
        if eps_cost < 0 or delta_cost < 0:
            raise InvalidParameterError("privacy costs must be non-negative")
        se, sd = self.spent_epsilon, self.spent_delta
        if se + eps_cost > self.epsilon + BUDGET_SLACK:
            raise BudgetExceededError("epsilon", se, eps_cost, self.epsilon)
        if sd + delta_cost > self.delta + BUDGET_SLACK:
            raise BudgetExceededError("delta", sd, delta_cost, self.delta)
        if self.parent is not None:
            self.parent._check(eps_cost, delta_cost)

    def _record(self, eps_cost: float, delta_cost: float, what: str) -> None:
        self.charges.append((what, float(eps_cost), float(delta_cost)))
        if self.parent is not None:
            self.parent._record(eps_cost, delta_cost, f"{self.label}/{what}" if self.label else what)

    def charge(self, eps_cost: float, delta_cost: float = 0.0, what: str = "") -> PrivacyBudget:
        # validate the whole chain before recording anything
        self._check(eps_cost, delta_cost)
        self._record(eps_cost, delta_cost, what)
        return self

    def split(self, epsilon: float, delta: float, label: str = "") -> PrivacyBudget:
        """Carve out a child budget; its charges also land on this budget."""
        rem_e, rem_d = self.remaining
        if epsilon > rem_e + BUDGET_SLACK:
            raise BudgetExceededError("epsilon", self.spent_epsilon, epsilon, self.epsilon)
        if delta > rem_d + BUDGET_SLACK:
            raise BudgetExceededError("delta", self.spent_delta, delta, self.delta)
        return PrivacyBudget(epsilon, delta, label=label, parent=self)

    def is_exhausted(self, tol: float = BUDGET_SLACK) -> bool:
        return (abs(self.spent_epsilon - self.epsilon) <= tol
                and abs(self.spent_delta - self.delta) <= tol)


def charge_budget(budget: PrivacyBudget, eps_cost: float, delta_cost: float,
                  what: str = "") -> PrivacyBudget:
    """Basic (additive) composition: add the costs to ``budget`` or raise."""
    return budget.charge(eps_cost, delta_cost, what)


def advanced_composition(eps: float, k: int, delta_prime: float) -> float:
    """Total epsilon of the k-fold adaptive composition of an (eps, 0)-DP mechanism.

    Returns ``k*eps*(e^eps - 1) + eps*sqrt(2k log(1/delta'))``; the composed
    mechanism is (result, delta')-DP.
    """
    if eps <= 0 or k < 1 or not 0 < delta_prime < 1:
        raise InvalidParameterError("need eps > 0, k >= 1 and delta' in (0, 1)")
    return k * eps * math.expm1(eps) + eps * math.sqrt(2 * k * math.log(1 / delta_prime))


def laplace_scale(l1_sensitivity: float, epsilon: float) -> float:
    """Scale of the Laplace mechanism, sensitivity / epsilon."""
    if epsilon <= 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")
    return l1_sensitivity / epsilon


def gaussian_std(l2_sensitivity: float, epsilon: float, delta: float) -> float:
    """Standard deviation of the classical Gaussian mechanism.

    sqrt(2 log(1.25/delta)) * sensitivity / epsilon
    """
    if epsilon <= 0:
        raise InvalidParameterError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2 * math.log(1.25 / delta)) * l2_sensitivity / epsilon


def laplace_noise(scale: float, count: int, rng: np.random.Generator,
                  mode: NoiseMode = NoiseMode.CALIBRATED) -> np.ndarray:
    """``count`` i.i.d. Laplace(0, scale) draws by inverse-CDF sampling."""
    if mode is NoiseMode.DISABLED:
        return np.zeros(count)
    if not scale > 0:
        raise InvalidParameterError(f"Laplace scale must be positive, got {scale}")
    # u in (-1/2, 1/2); log1p keeps the tails accurate near |u| = 1/2
    u = rng.random(count) - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def gaussian_noise(std: float, count: int, rng: np.random.Generator,
                   mode: NoiseMode = NoiseMode.CALIBRATED) -> np.ndarray:
    if mode is NoiseMode.DISABLED:
        return np.zeros(count)
    if not std > 0:
        raise InvalidParameterError(f"Gaussian std must be positive, got {std}")
    return std * rng.standard_normal(count)


def clip_scalar(x, R: float):
    """Truncate to [-R, R]; works elementwise on arrays."""
    if not R > 0:
        raise InvalidParameterError(f"R must be positive, got {R}")
    if np.ndim(x) == 0:
        return float(min(max(x, -R), R))
    return np.clip(x, -R, R)


def project_l2(v: np.ndarray, C: float) -> np.ndarray:
    """Euclidean projection onto the l2 ball of radius C."""
    if not C > 0:
        raise InvalidParameterError(f"C must be positive, got {C}")
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= C:
        return v.copy()
    w = v * (C / norm)
    # rounding can leave ||w|| an ulp above C; shrink so a second call is a no-op
    while np.linalg.norm(w) > C:
        w = w * (1.0 - 2.0 ** -52)
    return w
