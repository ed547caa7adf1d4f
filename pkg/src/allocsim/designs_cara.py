"""Covariate-adjusted response-adaptive rules for a continuous covariate.

Parameter estimates are ``(muA, muB, betaA, betaB)`` arrays; the covariate
of the incoming subject is ``z``.  Rule evaluation broadcasts over leading
axes so the simulator can evaluate all replications at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Optional

import numpy as np

from .designs_ra import dbcd_power
from .downcrossing import DowncrossingResult, find_downcrossing
from .errors import ConfigurationError, DegenerateModelError, InvalidRuleError
from .models import (
    CovariateSummary,
    LinearInteractionModel,
    TargetFunction,
    constant_target,
    normal_cdf,
)

DEFAULT_MC = 200_000


def _params(true_params) -> np.ndarray:
    if isinstance(true_params, LinearInteractionModel):
        return true_params.params
    return np.asarray(true_params, dtype=float)


class CaraRule:
    design_class: ClassVar[str] = "CARA"
    needs_rho: ClassVar[bool] = False

    def probability(self, x, estimate, z, rho=None):
        raise NotImplementedError


@dataclass(frozen=True)
class ETH(CaraRule):
    """Assign A with certainty when its estimated mean response at ``z`` is larger.

    A tie in the estimated means gives probability 1/2.
    """

    kind: ClassVar[str] = "ETH"

    def probability(self, x, estimate, z, rho=None):
        est = np.asarray(estimate, dtype=float)
        diff = est[..., 0] - est[..., 1] + np.asarray(z, dtype=float) * (est[..., 2] - est[..., 3])
        out = np.where(diff > 0, 1.0, np.where(diff < 0, 0.0, 0.5))
        out = np.broadcast_to(out, np.broadcast_shapes(out.shape, np.shape(x)))
        return np.array(out) if out.ndim else float(out)


@dataclass(frozen=True)
class ZhangTarget(CaraRule):
    """Allocate with the estimated covariate-specific target."""

    target: TargetFunction = field(default_factory=lambda: constant_target(0.5))
    kind: ClassVar[str] = "ZhangTarget"

    def probability(self, x, estimate, z, rho=None):
        out = np.asarray(self.target(estimate, z), dtype=float)
        out = np.broadcast_to(out, np.broadcast_shapes(out.shape, np.shape(x), np.shape(z)))
        return np.array(out) if out.ndim else float(out)


@dataclass(frozen=True)
class ZhangHu(CaraRule):
    """Covariate-adjusted doubly-adaptive coin.

    ``rho`` is the running average of the target over past covariates,
    evaluated at the current estimate.
    """

    nu: float = 2.0
    target: TargetFunction = field(default_factory=lambda: constant_target(0.5))
    kind: ClassVar[str] = "ZhangHu"
    needs_rho: ClassVar[bool] = True

    def __post_init__(self):
        if self.nu < 0:
            raise InvalidRuleError("nu must be nonnegative")

    def probability(self, x, estimate, z, rho=None):
        b = self.target(estimate, z)
        if rho is None:
            if self.target.covariate_dependent:
                raise ConfigurationError("ZhangHu needs rho for a covariate-dependent target")
            rho = b
        return dbcd_power(x, rho, b, self.nu)


CARA_RULES = (ETH, ZhangTarget, ZhangHu)


def zhang_hu_rho(target: TargetFunction, estimate, covariates) -> float:
    """``n^-1 sum_i target(estimate, z_i)`` over the stored past covariates."""
    if not target.covariate_dependent:
        return float(target(estimate))
    zs = np.asarray(covariates, dtype=float)
    return float(np.mean(target(np.asarray(estimate, dtype=float), zs)))


def cara_probability(
    rule: CaraRule,
    pi_n,
    estimate,
    summary: Optional[CovariateSummary],
    z_next,
    rho: Optional[float] = None,
):
    """Probability that the next subject, with covariate ``z_next``, gets A.

    ``summary`` is the covariate history summary; rules here only read it
    through ``rho`` for ZhangHu, which callers compute with ``zhang_hu_rho``.
    """
    return rule.probability(pi_n, np.asarray(estimate, dtype=float), z_next, rho)


def eth_limit(true_params) -> float:
    """Limiting proportion on A under the indicator rule with standard normal covariate."""
    muA, muB, betaA, betaB = _params(true_params)
    if betaA == betaB:
        raise DegenerateModelError("limit needs betaA != betaB")
    return 1.0 - normal_cdf((muB - muA) / abs(betaA - betaB))


@dataclass(frozen=True)
class AveragedValue:
    value: float
    se: float


def _averaged_from_draws(rule, pi, estimate, zs, rho) -> AveragedValue:
    vals = np.asarray(rule.probability(np.full(zs.shape, float(pi)), estimate, zs, rho), dtype=float)
    vals = np.broadcast_to(vals, zs.shape)
    if vals.size and vals.min() == vals.max():
        # A covariate-free rule: report the value itself, not a rounded mean.
        return AveragedValue(float(vals.flat[0]), 0.0)
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return AveragedValue(float(vals.mean()), se)


def averaged_rule(
    rule: CaraRule,
    pi: float,
    estimate,
    summary: Optional[CovariateSummary],
    covariate_sampler,
    mc_samples: int,
    rng=None,
    rho: Optional[float] = None,
) -> AveragedValue:
    """Monte Carlo mean of the rule over fresh covariate draws, with its standard error."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    zs = np.asarray(covariate_sampler.draw(rng, mc_samples), dtype=float)
    return _averaged_from_draws(rule, pi, np.asarray(estimate, dtype=float), zs, rho)


@dataclass(frozen=True)
class CaraLimit:
    value: float
    se: float
    mode: str
    solver: Optional[DowncrossingResult] = None


def cara_limit(
    rule: CaraRule,
    true_params,
    covariate_sampler,
    mode: str = "closed-form",
    *,
    linear: bool = False,
    mc_samples: int = DEFAULT_MC,
    rng=None,
) -> CaraLimit:
    """Limiting proportion on A.

    ``closed-form`` uses the indicator-rule formula or the expected target.
    ``solver`` finds the downcrossing of the covariate-averaged rule with
    common random numbers; with ``linear`` it plugs the mean feature into
    the rule instead of averaging.
    """
    params = _params(true_params)
    rng = np.random.default_rng(0) if rng is None else rng
    zs = np.asarray(covariate_sampler.draw(rng, mc_samples), dtype=float)

    rho = None
    if isinstance(rule, ZhangHu):
        rho = zhang_hu_rho(rule.target, params, zs)

    if mode == "closed-form":
        if isinstance(rule, ETH):
            return CaraLimit(eth_limit(params), 0.0, mode)
        if not rule.target.covariate_dependent:
            return CaraLimit(float(rule.target(params)), 0.0, mode)
        vals = np.asarray(rule.target(params, zs), dtype=float)
        return CaraLimit(float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size)), mode)

    if mode != "solver":
        raise ConfigurationError(f"unknown limit mode {mode!r}")
    if linear:
        zbar = covariate_sampler.mean_feature()
        res = find_downcrossing(lambda x: float(rule.probability(x, params, zbar, rho)))
        return CaraLimit(float(res.t), 0.0, mode, res)

    def averaged(x):
        return _averaged_from_draws(rule, x, params, zs, rho).value

    res = find_downcrossing(averaged)
    se = _averaged_from_draws(rule, res.t, params, zs, rho).se
    return CaraLimit(float(res.t), se, mode, res)
