"""Response-adaptive rules driven by the current proportion and parameter estimates.

Rules that chase a target expose ``allocation(x, y)`` where ``y`` is the
estimated target ``pi*(gamma_hat)``; the DAWD rule reads the estimate
itself.  All formulas broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, ClassVar

import numpy as np

from .downcrossing import DowncrossingResult, find_downcrossing
from .errors import InvalidRuleError, TargetRangeError
from .models import TargetFunction, neyman_target


def dbcd_power(x, a, b, nu):
    """``{1 + (1-b)/b * [(1-a) x / (a (1-x))]^nu}^-1``.

    With ``a = b = y`` this is the doubly-adaptive coin chasing ``y``;
    ``x = 0`` gives 1 and ``x = 1`` gives 0 whenever ``nu > 0``.
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = ((1.0 - a) * x) / (a * (1.0 - x))
        w = np.power(r, nu)
        out = 1.0 / (1.0 + (1.0 - b) / b * w)
    return out if np.ndim(out) else float(out)


def half_linear_up(u):
    return (1.0 + np.asarray(u, dtype=float)) / 2.0


def half_linear_down(u):
    return (1.0 - np.asarray(u, dtype=float)) / 2.0


def check_dawd_functions(g1, g2, points: int = 401) -> None:
    """Grid check of the weighting-function conditions for the DAWD rule."""
    u = np.linspace(-1.0, 1.0, points)
    v1 = np.array([float(g1(x)) for x in u])
    v2 = np.array([float(g2(x)) for x in u])
    m1 = np.array([float(g1(-x)) for x in u])
    m2 = np.array([float(g2(-x)) for x in u])
    problems = []
    if abs(float(g1(0.0)) - 0.5) > 1e-12 or abs(float(g2(0.0)) - 0.5) > 1e-12:
        problems.append("g1(0) and g2(0) must equal 1/2")
    if abs(float(g1(1.0)) - 1.0) > 1e-12 or abs(float(g2(-1.0)) - 1.0) > 1e-12:
        problems.append("g1(1) and g2(-1) must equal 1")
    if np.max(np.abs(m1 - (1 - v1))) > 1e-9 or np.max(np.abs(m2 - (1 - v2))) > 1e-9:
        problems.append("g1, g2 must satisfy g(-x) = 1 - g(x)")
    if np.any(np.diff(v1) < -1e-12):
        problems.append("g1 must be nondecreasing")
    if np.any(np.diff(v2) >= 0):
        problems.append("g2 must be decreasing")
    if np.any((v1 < 0) | (v1 > 1) | (v2 < 0) | (v2 > 1)):
        problems.append("g1, g2 must map into [0, 1]")
    if problems:
        raise InvalidRuleError("; ".join(problems))


class RaRule:
    design_class: ClassVar[str] = "RA"
    uses_target: ClassVar[bool] = True
    target: TargetFunction

    def target_value(self, estimate):
        return self.target(estimate)

    def allocation(self, x, y):
        raise NotImplementedError

    def probability(self, x, estimate):
        return self.allocation(x, self.target_value(estimate))


@dataclass(frozen=True)
class DAWD(RaRule):
    """Doubly-adaptive weighted differences for binary responses."""

    rho: float = 0.5
    g1: Callable = half_linear_up
    g2: Callable = half_linear_down
    kind: ClassVar[str] = "DAWD"
    uses_target: ClassVar[bool] = False

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise InvalidRuleError("ethical weight rho must lie in [0, 1)")
        check_dawd_functions(self.g1, self.g2)

    def target_value(self, estimate):
        return np.asarray(estimate, dtype=float)

    def allocation(self, x, estimate):
        est = np.asarray(estimate, dtype=float)
        diff = est[..., 0] - est[..., 1]
        out = self.rho * self.g1(diff) + (1.0 - self.rho) * self.g2(
            2.0 * np.asarray(x, dtype=float) - 1.0
        )
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class DBCD(RaRule):
    nu: float = 2.0
    target: TargetFunction = field(default_factory=neyman_target)
    kind: ClassVar[str] = "DBCD"

    def __post_init__(self):
        if self.nu < 0:
            raise InvalidRuleError("nu must be nonnegative")

    def allocation(self, x, y):
        return dbcd_power(x, y, y, self.nu)


@dataclass(frozen=True)
class ERADE(RaRule):
    alpha: float = 0.5
    target: TargetFunction = field(default_factory=neyman_target)
    kind: ClassVar[str] = "ERADE"

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidRuleError("alpha must lie in [0, 1)")

    def allocation(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.where(
            x > y, self.alpha * y, np.where(x < y, 1.0 - self.alpha * (1.0 - y), y)
        )
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class PowerRule(RaRule):
    """``y^tau`` above the target, ``y^(1/tau)`` at or below it."""

    tau: float = 2.0
    target: TargetFunction = field(default_factory=neyman_target)
    kind: ClassVar[str] = "PowerRule"

    def __post_init__(self):
        if self.tau < 1.0:
            raise InvalidRuleError("tau must be at least 1")

    def allocation(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.where(x > y, y**self.tau, y ** (1.0 / self.tau))
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class SML(RaRule):
    """Sequential maximum likelihood: allocate with the estimated target."""

    target: TargetFunction = field(default_factory=neyman_target)
    kind: ClassVar[str] = "SML"

    def allocation(self, x, y):
        out = np.broadcast_to(np.asarray(y, dtype=float), np.broadcast_shapes(np.shape(x), np.shape(y)))
        return np.array(out) if out.ndim else float(out)


RA_RULES = (DAWD, DBCD, ERADE, PowerRule, SML)


def ra_probability(rule: RaRule, pi_n, estimate_or_target) -> float:
    """Probability of assigning A given the proportion and an estimate.

    For target-chasing rules a bare number is taken as the target value;
    anything else is treated as a parameter estimate.
    """
    if rule.uses_target and np.ndim(estimate_or_target) == 0:
        y = float(estimate_or_target)
        if not 0.0 < y < 1.0:
            raise TargetRangeError(f"target {y} outside (0, 1)")
    else:
        y = rule.target_value(estimate_or_target)
    return rule.allocation(pi_n, y)


def ra_limit_result(rule: RaRule, true_params) -> DowncrossingResult:
    y = rule.target_value(np.asarray(true_params, dtype=float))
    return find_downcrossing(lambda x: rule.allocation(x, y))


def ra_limit(rule: RaRule, true_params) -> float:
    """Limiting proportion on A at the true parameters."""
    if rule.uses_target:
        return float(rule.target(np.asarray(true_params, dtype=float)))
    return float(ra_limit_result(rule, true_params).t)
