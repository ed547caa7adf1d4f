"""Response models, covariate samplers, estimators and target allocations.

Arm 0 is treatment A, arm 1 is treatment B throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .core import AssignmentRecord, TrialHistory
from .errors import (
    DegenerateModelError,
    DomainError,
    InsufficientDataError,
    ModelInputError,
    SingularDesignError,
    TargetRangeError,
)

EPS_CLIP = 0.01
LS_RIDGE = 1e-12


def normal_cdf(x):
    """Standard normal CDF."""
    out = ndtr(np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


# -- response models ---------------------------------------------------------


@dataclass(frozen=True)
class BinaryModel:
    """Independent Bernoulli responses with success probability per arm."""

    pA: float
    pB: float
    noise_kind = "uniform"
    needs_covariate = False

    def __post_init__(self):
        # Degenerate 0/1 probabilities are allowed for sampling; limits need interior values.
        for name in ("pA", "pB"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ModelInputError(f"{name} must lie in [0, 1]")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.pA, self.pB])

    def response_from_noise(self, arm, z, u):
        p = np.where(np.asarray(arm) == 0, self.pA, self.pB)
        return (np.asarray(u) < p).astype(float)


@dataclass(frozen=True)
class LinearInteractionModel:
    """Gaussian responses ``mu_k + z * beta_k + noise`` with a scalar covariate."""

    muA: float
    muB: float
    betaA: float
    betaB: float
    noise_sd: float = 1.0
    noise_kind = "normal"
    needs_covariate = True

    def __post_init__(self):
        if self.betaA == self.betaB:
            raise DegenerateModelError("interaction model needs betaA != betaB")
        if self.noise_sd < 0:
            raise ModelInputError("noise_sd must be nonnegative")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.muA, self.muB, self.betaA, self.betaB])

    def mean(self, arm, z):
        arm = np.asarray(arm)
        mu = np.where(arm == 0, self.muA, self.muB)
        beta = np.where(arm == 0, self.betaA, self.betaB)
        return mu + np.asarray(z, dtype=float) * beta

    def response_from_noise(self, arm, z, eps):
        return self.mean(arm, z) + self.noise_sd * np.asarray(eps)


@dataclass(frozen=True)
class LinearCommonSlopeModel:
    """Gaussian responses ``mu_k + feature_map(z) . beta + noise``."""

    muA: float
    muB: float
    beta: tuple
    feature_map: Callable
    noise_sd: float = 1.0
    noise_kind = "normal"
    needs_covariate = True

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in np.atleast_1d(self.beta)))
        if self.noise_sd < 0:
            raise ModelInputError("noise_sd must be nonnegative")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.muA, self.muB, *self.beta])

    def features(self, z) -> np.ndarray:
        f = np.atleast_1d(np.asarray(self.feature_map(z), dtype=float))
        if f.shape[-1] != len(self.beta):
            raise ModelInputError(
                f"feature map has dimension {f.shape[-1]}, beta has {len(self.beta)}"
            )
        return f

    def mean(self, arm, z):
        return (self.muA if arm == 0 else self.muB) + float(self.features(z) @ np.array(self.beta))


def sample_response(model, arm: int, covariate=None, rng=None, size=None):
    """Draw one response (or ``size`` i.i.d. responses) for ``arm``."""
    if arm not in (0, 1):
        raise ModelInputError(f"arm must be 0 (A) or 1 (B), got {arm}")
    if model.needs_covariate and covariate is None:
        raise ModelInputError(f"{type(model).__name__} needs a covariate value")
    rng = np.random.default_rng() if rng is None else rng
    if model.noise_kind == "uniform":
        noise = rng.random(size)
    else:
        noise = rng.standard_normal(size)
    if isinstance(model, LinearCommonSlopeModel):
        means = model.mean(arm, covariate)
        out = means + model.noise_sd * np.asarray(noise)
    else:
        out = model.response_from_noise(arm, covariate, noise)
    return out if np.ndim(out) else float(out)


# -- covariates ---------------------------------------------------------------


@dataclass(frozen=True)
class StandardNormalCovariate:
    kind = "continuous"

    def draw(self, rng, size=None):
        return rng.standard_normal(size)

    def mean_feature(self):
        return 0.0


@dataclass(frozen=True)
class CategoricalCovariate:
    """Two categorical factors with joint cell probabilities ``probs[j][l]``."""

    probs: tuple
    kind = "categorical"

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise DomainError("probs must be a (J+1) x (L+1) matrix")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise DomainError("probs must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", tuple(tuple(float(v) for v in row) for row in p))

    @classmethod
    def uniform(cls, J: int = 1, L: int = 1) -> "CategoricalCovariate":
        cells = (J + 1) * (L + 1)
        return cls(tuple(tuple(1.0 / cells for _ in range(L + 1)) for _ in range(J + 1)))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.probs)

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    def cell_from_uniform(self, u):
        """Flat stratum index ``j * (L+1) + l`` by inverse CDF."""
        cdf = np.cumsum(self.matrix.ravel())
        cdf[-1] = 1.0
        return np.searchsorted(cdf, np.asarray(u), side="right")

    def draw(self, rng, size=None):
        cells = self.cell_from_uniform(rng.random(size))
        J1, L1 = self.shape
        if size is None:
            return divmod(int(cells), L1)
        return [divmod(int(c), L1) for c in np.ravel(cells)]


# -- covariate summaries --------------------------------------------------------


@dataclass(frozen=True)
class CovariateSummary:
    """Running summary of past covariates: moments, or stratum frequencies."""

    n: int = 0
    moment1: Optional[np.ndarray] = None
    moment2: Optional[np.ndarray] = None
    stratum_counts: Optional[tuple] = None

    @classmethod
    def continuous(cls) -> "CovariateSummary":
        return cls()

    @classmethod
    def categorical(cls, J: int, L: int) -> "CovariateSummary":
        return cls(stratum_counts=tuple((0,) * (L + 1) for _ in range(J + 1)))

    @property
    def is_categorical(self) -> bool:
        return self.stratum_counts is not None

    @property
    def stratum_freqs(self) -> np.ndarray:
        counts = np.asarray(self.stratum_counts, dtype=float)
        if self.n == 0:
            return np.zeros_like(counts)
        return counts / self.n


def update_summary(summary: CovariateSummary, z) -> CovariateSummary:
    n = summary.n + 1
    if summary.is_categorical:
        counts = [list(row) for row in summary.stratum_counts]
        try:
            j, l = z
            if j < 0 or l < 0:
                raise IndexError
            counts[j][l] += 1
        except (IndexError, TypeError, ValueError):
            raise DomainError(f"unknown stratum {z!r}") from None
        return CovariateSummary(n, stratum_counts=tuple(tuple(r) for r in counts))
    zf = np.asarray(z, dtype=float)
    m1 = np.zeros_like(zf) if summary.moment1 is None else summary.moment1
    m2 = np.zeros_like(zf) if summary.moment2 is None else summary.moment2
    return CovariateSummary(n, m1 + (zf - m1) / n, m2 + (zf * zf - m2) / n)


# -- target allocations ---------------------------------------------------------


@dataclass(frozen=True)
class TargetFunction:
    """Desired allocation to A as a function of parameters (and covariate).

    ``continuous`` is a declared claim; it cannot be verified for a black box.
    ``covariate_dependent`` tells the simulator whether ``z`` matters.
    """

    evaluator: Callable
    name: str = "custom"
    continuous: bool = True
    covariate_dependent: bool = False

    def __call__(self, estimate, z=None):
        if self.covariate_dependent:
            out = np.asarray(self.evaluator(estimate, z), dtype=float)
        else:
            out = np.asarray(self.evaluator(estimate), dtype=float)
        if np.any(~(out > 0.0)) or np.any(~(out < 1.0)):
            raise TargetRangeError(f"target {self.name} produced a value outside (0,1)")
        return out if out.ndim else float(out)


def constant_target(value: float) -> TargetFunction:
    if not 0.0 < value < 1.0:
        raise TargetRangeError("constant target must lie in (0, 1)")

    def ev(estimate, z=None):
        shape = np.shape(estimate)[:-1] if np.ndim(estimate) else ()
        if z is not None:
            shape = np.broadcast_shapes(shape, np.shape(z))
        return np.full(shape, value)

    return TargetFunction(ev, name=f"constant({value:g})")


def neyman_target() -> TargetFunction:
    """``sqrt(pA) / (sqrt(pA) + sqrt(pB))`` for binary responses."""

    def ev(estimate):
        p = np.asarray(estimate, dtype=float)
        a, b = np.sqrt(p[..., 0]), np.sqrt(p[..., 1])
        return a / (a + b)

    return TargetFunction(ev, name="neyman")


def normal_cdf_target(scale: float = 1.0) -> TargetFunction:
    """Covariate target ``Phi(scale * z)``, independent of the parameters."""

    def ev(estimate, z):
        return ndtr(scale * np.asarray(z, dtype=float))

    return TargetFunction(ev, name=f"normal_cdf({scale:g})", covariate_dependent=True)


# -- estimators -------------------------------------------------------------------


def clip_probability(p, eps: float = EPS_CLIP):
    return np.clip(p, eps, 1.0 - eps)


def binary_estimate_from_counts(successes, trials, eps: float = EPS_CLIP) -> np.ndarray:
    trials = np.asarray(trials, dtype=float)
    return clip_probability(np.asarray(successes) / np.maximum(trials, 1.0), eps)


def estimate_binary(history: TrialHistory, eps: float = EPS_CLIP) -> np.ndarray:
    """Clipped per-arm success frequencies ``(pA_hat, pB_hat)``."""
    arms = history.arms()
    y = history.responses()
    out = []
    for arm in (0, 1):
        sel = arms == arm
        if not sel.any():
            raise InsufficientDataError(f"no observations on arm {arm}")
        out.append(float(np.nanmean(y[sel])))
    return clip_probability(np.array(out), eps)


@dataclass(frozen=True)
class LeastSquaresFit:
    params: np.ndarray
    ridge_used: bool = False


def _interaction_row(arm, z):
    z = float(z)
    return [1.0, 0.0, z, 0.0] if arm == 0 else [0.0, 1.0, 0.0, z]


def least_squares_design(history: TrialHistory, model_shape: str = "interaction", feature_map=None):
    rows = []
    for rec in history.records:
        if rec.covariate is None:
            raise ModelInputError("least squares needs covariates on every record")
        if model_shape == "interaction":
            rows.append(_interaction_row(rec.arm, rec.covariate))
        elif model_shape == "common_slope":
            if feature_map is None:
                raise ModelInputError("common_slope shape needs a feature_map")
            f = np.atleast_1d(np.asarray(feature_map(rec.covariate), dtype=float))
            rows.append([1.0 - rec.arm, float(rec.arm), *f])
        else:
            raise ModelInputError(f"unknown model shape {model_shape!r}")
    return np.array(rows, dtype=float), history.responses()


def estimate_least_squares(
    history: TrialHistory,
    model_shape: str = "interaction",
    feature_map=None,
    ridge: bool = False,
) -> LeastSquaresFit:
    """OLS for ``(muA, muB, betaA, betaB)`` or ``(muA, muB, beta...)``.

    Rank-deficient designs raise unless ``ridge`` is set, in which case a
    tiny ridge is added and the fit is flagged.
    """
    X, y = least_squares_design(history, model_shape, feature_map)
    if X.size == 0:
        raise SingularDesignError("empty design")
    p = X.shape[1]
    XtX, Xty = X.T @ X, X.T @ y
    if np.linalg.matrix_rank(X) < p:
        if not ridge:
            raise SingularDesignError(f"design has rank < {p}")
        return LeastSquaresFit(np.linalg.solve(XtX + LS_RIDGE * np.eye(p), Xty), True)
    return LeastSquaresFit(np.linalg.solve(XtX, Xty), False)


def interaction_fit_from_sums(n, sz, szz, sy, szy):
    """Per-arm OLS of ``y = mu + z beta`` from running sums (vectorised).

    Falls back to a tiny ridge when the 2x2 normal matrix is singular.
    """
    n, sz, szz, sy, szy = (np.asarray(a, dtype=float) for a in (n, sz, szz, sy, szy))
    a, b, d = n, sz, szz
    det = a * d - b * b
    singular = ~(det > 1e-12 * np.maximum(a * d, 1.0))
    a = np.where(singular, a + LS_RIDGE, a)
    d = np.where(singular, d + LS_RIDGE, d)
    det = a * d - b * b
    det = np.where(det == 0.0, LS_RIDGE, det)
    mu = (d * sy - b * szy) / det
    beta = (a * szy - b * sy) / det
    return mu, beta


# -- initial stage ------------------------------------------------------------------


def block_choice(u: float, remaining: int) -> int:
    return min(int(u * remaining), remaining - 1)


def initial_stage(
    m: int,
    K: int = 2,
    rng=None,
    response_model=None,
    covariate_sampler=None,
) -> TrialHistory:
    """``m`` permuted blocks of size ``K``: exactly ``m`` assignments per arm."""
    if m < 1:
        raise ValueError("m must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    hist = TrialHistory.empty(K)
    step = 0
    for _ in range(m):
        remaining = list(range(K))
        while remaining:
            z = covariate_sampler.draw(rng) if covariate_sampler is not None else None
            arm = remaining.pop(block_choice(rng.random(), len(remaining)))
            y = None
            if response_model is not None:
                y = sample_response(response_model, arm, z, rng)
            step += 1
            hist = hist.append(AssignmentRecord(step, arm, z, y))
    return hist
