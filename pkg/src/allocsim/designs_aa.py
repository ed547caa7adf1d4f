"""Assignment-adaptive rules: the next allocation depends on past assignments only.

Every rule exposes ``probabilities(counts, n)`` which is vectorised over
leading axes (the simulator evaluates a whole batch of replications at
once).  Two-arm rules also expose ``allocation_function(x)``, the map from
the current proportion on arm A to the probability of assigning A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, ClassVar, Optional, Sequence

import numpy as np

from .core import AllocationState
from .downcrossing import (
    DowncrossingResult,
    find_downcrossing,
    find_vectorial_downcrossing,
)
from .errors import InvalidRuleError, NeedsHistoryError

SYMMETRY_GRID = np.linspace(-1.0, 1.0, 401)


def linear_wei(u):
    """Default Wei coin ``(1 - u) / 2`` on [-1, 1]."""
    return (1.0 - np.asarray(u, dtype=float)) / 2.0


def cubic_wei(u):
    return (1.0 - np.asarray(u, dtype=float) ** 3) / 2.0


def logistic(x):
    """``1 / (1 + e^x)``: decreasing, and ``F(-x) = 1 - F(x)``."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 - np.tanh(0.5 * x))


def power_family(a: float) -> Callable:
    """The adjustable-coin family ``F_a``.

    ``1 / (x^a + 1)`` for ``x >= 1``, ``1/2`` on ``(-1, 1)`` and extended to
    ``x <= -1`` by ``F(-x) = 1 - F(x)``.
    """
    if a < 0:
        raise InvalidRuleError("exponent must be nonnegative")

    def F(x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        with np.errstate(over="ignore"):
            tail = 1.0 / (np.power(np.maximum(ax, 1.0), a) + 1.0)
        out = np.where(x >= 1.0, tail, np.where(x <= -1.0, 1.0 - tail, 0.5))
        return out if out.ndim else float(out)

    F.exponent = a
    return F


def check_symmetric_decreasing(func, grid, name: str) -> None:
    """Grid check of ``func(-x) = 1 - func(x)``, monotone decrease and range."""
    grid = np.asarray(grid, dtype=float)
    vals = np.asarray([float(func(x)) for x in grid])
    mirror = np.asarray([float(func(-x)) for x in grid])
    if np.any(vals < 0) or np.any(vals > 1):
        raise InvalidRuleError(f"{name} leaves [0,1]")
    if np.max(np.abs(mirror - (1.0 - vals))) > 1e-9:
        raise InvalidRuleError(f"{name} is not symmetric: F(-x) != 1 - F(x)")
    if np.any(np.diff(vals) > 1e-12):
        raise InvalidRuleError(f"{name} is not decreasing")


def _as_counts(counts):
    c = np.asarray(counts)
    return c, c.sum(axis=-1)


def _proportion0(counts, n):
    """Proportion on arm A, with the convention pi_0 = 0."""
    n = np.asarray(n)
    return np.where(n > 0, counts[..., 0] / np.maximum(n, 1), 0.0)


def _two_arm(p_a):
    p_a = np.asarray(p_a, dtype=float)
    return np.stack([p_a, 1.0 - p_a], axis=-1)


class AaRule:
    """Shared behaviour of assignment-adaptive rules."""

    design_class: ClassVar[str] = "AA"
    reads_history: ClassVar[bool] = True
    K: int = 2

    def probabilities(self, counts, n=None) -> np.ndarray:
        raise NotImplementedError

    def allocation_function(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no scalar allocation function")


@dataclass(frozen=True)
class CompleteRandomization(AaRule):
    K: int = 2
    kind: ClassVar[str] = "CR"
    reads_history: ClassVar[bool] = False

    def probabilities(self, counts, n=None):
        counts = np.asarray(counts)
        return np.full(counts.shape, 1.0 / self.K)

    def allocation_function(self, x):
        return np.full(np.shape(x), 0.5) if np.ndim(x) else 0.5


@dataclass(frozen=True)
class EfronBCD(AaRule):
    p: float = 2.0 / 3.0
    kind: ClassVar[str] = "Efron"

    def __post_init__(self):
        if not 0.5 <= self.p <= 1.0:
            raise InvalidRuleError(f"Efron bias p={self.p} outside [1/2, 1]")

    def probabilities(self, counts, n=None):
        counts, total = _as_counts(counts)
        d = 2 * counts[..., 0] - total
        return _two_arm(np.where(d < 0, self.p, np.where(d > 0, 1.0 - self.p, 0.5)))

    def allocation_function(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < 0.5, self.p, np.where(x > 0.5, 1.0 - self.p, 0.5))
        return out if out.ndim else float(out)


def _exact_fraction(t: float) -> Optional[Fraction]:
    frac = Fraction(t).limit_denominator(10**6)
    return frac if float(frac) == t else None


@dataclass(frozen=True)
class ExtendedEfron(AaRule):
    """Efron-type coin steering the proportion to an arbitrary ``target``."""

    target: float = 0.5
    p1: float = 1.0 / 3.0
    p2: float = 2.0 / 3.0
    kind: ClassVar[str] = "EfronExtended"

    def __post_init__(self):
        t, p1, p2 = self.target, self.p1, self.p2
        if not 0.0 < t < 1.0:
            raise InvalidRuleError("target must lie in (0, 1)")
        if not 0.0 <= p1 <= t <= p2 <= 1.0:
            raise InvalidRuleError("need 0 <= p1 <= target <= p2 <= 1")
        if p1 == t == p2:
            raise InvalidRuleError("at least one of p1 < target, target < p2 must be strict")

    def _sign(self, counts, total):
        frac = _exact_fraction(self.target)
        if frac is None:
            return np.where(counts[..., 0] > total * self.target, 1, -1)
        return np.sign(counts[..., 0] * frac.denominator - total * frac.numerator)

    def probabilities(self, counts, n=None):
        counts, total = _as_counts(counts)
        s = self._sign(counts, total)
        return _two_arm(np.where(s < 0, self.p2, np.where(s > 0, self.p1, self.target)))

    def allocation_function(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < self.target, self.p2, np.where(x > self.target, self.p1, self.target))
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class WeiAdaptive(AaRule):
    """Wei's adaptive coin ``f(2 pi - 1)``."""

    f: Callable = linear_wei
    kind: ClassVar[str] = "WeiAdaptive"

    def __post_init__(self):
        check_symmetric_decreasing(self.f, SYMMETRY_GRID, "Wei coin f")

    def probabilities(self, counts, n=None):
        counts, total = _as_counts(counts)
        x = _proportion0(counts, total)
        return _two_arm(self.f(2.0 * x - 1.0))

    def allocation_function(self, x):
        out = self.f(2.0 * np.asarray(x, dtype=float) - 1.0)
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ABCD(AaRule):
    """Adjustable biased coin: ``F(D_n)`` with a step-independent ``F``."""

    F: Callable = logistic
    kind: ClassVar[str] = "ABCD"

    def __post_init__(self):
        check_symmetric_decreasing(self.F, np.linspace(-50, 50, 1001), "ABCD F")

    def probabilities(self, counts, n=None):
        counts, total = _as_counts(counts)
        return _two_arm(self.F(2 * counts[..., 0] - total))

    def step_function(self, n: int) -> Callable:
        """``phi_n(x) = F(n (2x - 1))``, the rule seen as a map of the proportion."""

        def phi(x):
            out = self.F(n * (2.0 * np.asarray(x, dtype=float) - 1.0))
            return out if np.ndim(out) else float(out)

        return phi

    def allocation_function(self, x, n: int = 1):
        return self.step_function(n)(x)


@dataclass(frozen=True)
class AaStar(AaRule):
    """Asymmetric coin: A surely while under-represented, else a fair coin."""

    kind: ClassVar[str] = "AaStar"

    def probabilities(self, counts, n=None):
        counts, total = _as_counts(counts)
        return _two_arm(np.where(2 * counts[..., 0] <= total, 1.0, 0.5))

    def allocation_function(self, x):
        out = np.where(np.asarray(x, dtype=float) <= 0.5, 1.0, 0.5)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Tabulated(AaRule):
    """Piecewise-linear allocation function through user-given points.

    Intended for experimenting with custom rules; no monotonicity is
    enforced here so that the property checks can flag bad rules.
    """

    points: tuple = ((0.0, 1.0), (1.0, 0.0))
    kind: ClassVar[str] = "Tabulated"

    def __post_init__(self):
        pts = tuple((float(a), float(b)) for a, b in self.points)
        object.__setattr__(self, "points", pts)
        xs = [p[0] for p in pts]
        if len(pts) < 2 or xs[0] != 0.0 or xs[-1] != 1.0 or any(np.diff(xs) <= 0):
            raise InvalidRuleError("points must have increasing x from 0 to 1")
        if any(not 0.0 <= p[1] <= 1.0 for p in pts):
            raise InvalidRuleError("tabulated probabilities must lie in [0, 1]")

    def allocation_function(self, x):
        xs, ys = zip(*self.points)
        out = np.interp(np.asarray(x, dtype=float), xs, ys)
        return out if np.ndim(out) else float(out)

    def probabilities(self, counts, n=None):
        counts, total = _as_counts(counts)
        return _two_arm(self.allocation_function(_proportion0(counts, total)))


def _wei_inverse_weights(x):
    x = np.asarray(x, dtype=float)
    K = x.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = 1.0 / x - 1.0
        inf = np.isinf(u)
        n_inf = inf.sum(axis=-1, keepdims=True)
        total = u.sum(axis=-1, keepdims=True)
        out = np.where(
            n_inf > 0,
            inf / np.maximum(n_inf, 1),
            np.where(total > 0, u / np.where(total > 0, total, 1.0), 1.0 / K),
        )
    return out


@dataclass(frozen=True)
class WeiMulti1(AaRule):
    """K-arm rule proportional to ``1/pi_j - 1``."""

    K: int = 3
    kind: ClassVar[str] = "WeiMulti1"

    def __post_init__(self):
        if self.K < 2:
            raise InvalidRuleError("K must be at least 2")

    def allocation_function(self, x):
        return _wei_inverse_weights(x)

    def probabilities(self, counts, n=None):
        counts, total = _as_counts(counts)
        pi = counts / np.maximum(total, 1)[..., None]
        return _wei_inverse_weights(pi)


@dataclass(frozen=True)
class WeiMulti2(AaRule):
    """K-arm rule ``(1 - pi_j) / (K - 1)``."""

    K: int = 3
    kind: ClassVar[str] = "WeiMulti2"

    def __post_init__(self):
        if self.K < 2:
            raise InvalidRuleError("K must be at least 2")

    def allocation_function(self, x):
        return (1.0 - np.asarray(x, dtype=float)) / (self.K - 1)

    def probabilities(self, counts, n=None):
        counts, total = _as_counts(counts)
        pi = counts / np.maximum(total, 1)[..., None]
        # Before any assignment every arm gets 1/K.
        return np.where((total > 0)[..., None], (1.0 - pi) / (self.K - 1), 1.0 / self.K)


AA_RULES = (
    CompleteRandomization,
    EfronBCD,
    ExtendedEfron,
    WeiAdaptive,
    ABCD,
    AaStar,
    WeiMulti1,
    WeiMulti2,
    Tabulated,
)


def aa_probability(rule: AaRule, state: AllocationState) -> np.ndarray:
    """Arm-probability vector for the next assignment."""
    if state.K != rule.K:
        raise InvalidRuleError(f"rule expects K={rule.K}, state has K={state.K}")
    if state.n == 0 and rule.reads_history:
        raise NeedsHistoryError(f"{rule.kind} reads the allocation proportion; n=0")
    return rule.probabilities(np.asarray(state.counts), state.n)


def aa_limit_result(rule: AaRule) -> DowncrossingResult:
    if isinstance(rule, ABCD):
        return DowncrossingResult(t=0.5, residual=0.0, bracket_width=0.0, iterations=0)
    if rule.K > 2:
        return find_vectorial_downcrossing(rule.allocation_function, rule.K)
    return find_downcrossing(rule.allocation_function)


def aa_limit(rule: AaRule) -> np.ndarray:
    """Almost-sure limit of the allocation proportions, one entry per arm."""
    res = aa_limit_result(rule)
    if rule.K > 2:
        return np.asarray(res.t, dtype=float)
    return np.array([res.t, 1.0 - res.t])
