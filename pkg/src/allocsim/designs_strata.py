"""Allocation rules for two categorical covariates (strata ``(j, l)``).

Every rule has a batch evaluator over arrays of tables so the simulator can
step all replications together: ``N`` and ``NA`` have shape
``(R, J+1, L+1)`` and ``j``, ``l`` shape ``(R,)``.  Sign decisions use exact
integer imbalances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, ClassVar, Optional

import numpy as np

from .designs_ra import dbcd_power
from .errors import (
    DomainError,
    InvalidDistributionError,
    InvalidRuleError,
    UndefinedProportionError,
)

ATKINSON_RIDGE = 1e-8


# -- tables -------------------------------------------------------------------------


@dataclass(frozen=True)
class StratumTable:
    """Stratum sizes ``N[j][l]`` and A-counts ``NA[j][l]``."""

    N: tuple
    NA: tuple

    def __post_init__(self):
        N = np.asarray(self.N, dtype=np.int64)
        NA = np.asarray(self.NA, dtype=np.int64)
        if N.ndim != 2 or N.shape != NA.shape:
            raise DomainError("N and NA must be matrices of equal shape")
        if np.any(NA < 0) or np.any(NA > N):
            raise DomainError("need 0 <= NA <= N in every cell")
        object.__setattr__(self, "N", tuple(tuple(int(v) for v in r) for r in N))
        object.__setattr__(self, "NA", tuple(tuple(int(v) for v in r) for r in NA))

    @classmethod
    def empty(cls, J: int = 1, L: int = 1) -> "StratumTable":
        zeros = tuple((0,) * (L + 1) for _ in range(J + 1))
        return cls(zeros, zeros)

    @classmethod
    def from_arrays(cls, N, NA) -> "StratumTable":
        return cls(tuple(map(tuple, np.asarray(N))), tuple(map(tuple, np.asarray(NA))))

    @property
    def sizes(self) -> np.ndarray:
        return np.asarray(self.N, dtype=np.int64)

    @property
    def a_counts(self) -> np.ndarray:
        return np.asarray(self.NA, dtype=np.int64)

    @property
    def J(self) -> int:
        return len(self.N) - 1

    @property
    def L(self) -> int:
        return len(self.N[0]) - 1

    @property
    def n(self) -> int:
        return int(self.sizes.sum())

    def cell_proportions(self) -> np.ndarray:
        """``pi(j,l) = NA/N``; NaN in empty cells."""
        N = self.sizes
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(N > 0, self.a_counts / np.maximum(N, 1), np.nan)

    def cell_frequencies(self) -> np.ndarray:
        if self.n == 0:
            raise UndefinedProportionError("no subjects yet")
        return self.sizes / self.n


def stratum_update(table: StratumTable, stratum, arm: int) -> StratumTable:
    j, l = stratum
    if not (0 <= j <= table.J and 0 <= l <= table.L):
        raise IndexError(f"stratum {stratum!r} outside {table.J + 1}x{table.L + 1}")
    if arm not in (0, 1):
        raise IndexError(f"arm {arm} is not 0 or 1")
    N = table.sizes.copy()
    NA = table.a_counts.copy()
    N[j, l] += 1
    NA[j, l] += arm == 0
    return StratumTable.from_arrays(N, NA)


@dataclass(frozen=True)
class Imbalances:
    """Integer A-minus-B differences: overall, per T level, per W level, per cell."""

    total: int
    rows: np.ndarray
    cols: np.ndarray
    cells: np.ndarray


def integer_imbalances(table: StratumTable) -> Imbalances:
    D = 2 * table.a_counts - table.sizes
    return Imbalances(int(D.sum()), D.sum(axis=1), D.sum(axis=0), D)


def marginal_imbalance(table: StratumTable, axis, level: int) -> float:
    """``n^-1 D(t_j)`` (axis ``"T"``) or ``n^-1 D(w_l)`` (axis ``"W"``).

    Computed as ``sum [2 pi(j,l) - 1] p_hat(j,l)`` over the row or column;
    empty cells contribute zero.
    """
    terms = _cell_terms(table)
    if axis in ("T", 0):
        return float(terms[level, :].sum())
    if axis in ("W", 1):
        return float(terms[:, level].sum())
    raise ValueError(f"axis must be 'T' or 'W', got {axis!r}")


def _cell_terms(table: StratumTable) -> np.ndarray:
    p_hat = table.cell_frequencies()
    pi = table.cell_proportions()
    return np.where(table.sizes > 0, (2.0 * np.nan_to_num(pi) - 1.0) * p_hat, 0.0)


def global_imbalance(table: StratumTable) -> float:
    """``n^-1 D = 2 pi_n - 1``."""
    if table.n == 0:
        raise UndefinedProportionError("no subjects yet")
    return 2.0 * table.a_counts.sum() / table.n - 1.0


def global_imbalance_from_cells(table: StratumTable) -> float:
    return float(_cell_terms(table).sum())


# -- weights ---------------------------------------------------------------------------


def _exact(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass(frozen=True)
class ImbalanceWeights:
    """Weights on overall, T-margin, W-margin and within-stratum imbalance."""

    wg: float
    wT: float
    wW: float
    ws: float

    def __post_init__(self):
        ws = self.exact()
        if any(w < 0 for w in ws):
            raise InvalidRuleError("imbalance weights must be nonnegative")
        if sum(ws) != 1:
            raise InvalidRuleError(f"imbalance weights sum to {float(sum(ws))}, not 1")

    def exact(self) -> tuple:
        return tuple(_exact(w) for w in (self.wg, self.wT, self.wW, self.ws))

    def integer_weights(self) -> tuple:
        """Weights scaled by a common denominator to integers (same signs of sums)."""
        fr = self.exact()
        den = math.lcm(*(f.denominator for f in fr))
        return tuple(int(f * den) for f in fr)


def huhu_weight_condition(J: int, L: int, weights: ImbalanceWeights) -> bool:
    """``(JL + J + L) wg + J wW + L wT < 1/2`` in exact arithmetic."""
    wg, wT, wW, _ = weights.exact()
    return (J * L + J + L) * wg + J * wW + L * wT < Fraction(1, 2)


# -- rules -------------------------------------------------------------------------------


def _gather(arr, j, l):
    r = np.arange(arr.shape[0])
    return arr[r, j, l]


def _batch_imbalances(N, NA, j, l):
    D = 2 * NA - N
    r = np.arange(N.shape[0])
    total = D.sum(axis=(1, 2))
    row = D.sum(axis=2)[r, j]
    col = D.sum(axis=1)[r, l]
    cell = D[r, j, l]
    return total, row, col, cell


def _sign_rule(s, p):
    return np.where(s < 0, p, np.where(s > 0, 1.0 - p, 0.5))


class StrataRule:
    design_class: ClassVar[str] = "CA"
    balance: ClassVar[bool] = True

    def batch_probability(self, N, NA, j, l, probs=None):
        raise NotImplementedError

    def cell_map(self, pi, p):
        """Rule as a map of the cell-proportion matrix for large ``n``."""
        raise NotImplementedError


def _check_bias(p):
    if not 0.5 <= p <= 1.0:
        raise InvalidRuleError("bias p must lie in [1/2, 1]")


@dataclass(frozen=True)
class PocockSimon(StrataRule):
    """Minimisation on the sum of the two marginal imbalances."""

    p: float = 0.8
    kind: ClassVar[str] = "PocockSimon"

    def __post_init__(self):
        _check_bias(self.p)

    def batch_probability(self, N, NA, j, l, probs=None):
        _, row, col, _ = _batch_imbalances(N, NA, j, l)
        return _sign_rule(row + col, self.p)

    def cell_map(self, pi, p):
        terms = (2 * pi - 1) * p
        s = terms.sum(axis=1)[:, None] + terms.sum(axis=0)[None, :]
        return _sign_rule(s, self.p)


@dataclass(frozen=True)
class HuHu(StrataRule):
    """Biased coin on a weighted sum of overall, marginal and within-stratum imbalance."""

    p: float = 0.8
    weights: ImbalanceWeights = field(
        default_factory=lambda: ImbalanceWeights(0.05, 0.1, 0.1, 0.75)
    )
    kind: ClassVar[str] = "HuHu"

    def __post_init__(self):
        _check_bias(self.p)

    def batch_probability(self, N, NA, j, l, probs=None):
        total, row, col, cell = _batch_imbalances(N, NA, j, l)
        wg, wT, wW, ws = self.weights.integer_weights()
        s = wg * total + wT * row + wW * col + ws * cell
        return _sign_rule(s, self.p)

    def cell_map(self, pi, p):
        wg, wT, wW, ws = (float(w) for w in self.weights.exact())
        terms = (2 * pi - 1) * p
        s = (
            wg * terms.sum()
            + wT * terms.sum(axis=1)[:, None]
            + wW * terms.sum(axis=0)[None, :]
            + ws * (2 * pi - 1)
        )
        return _sign_rule(s, self.p)


def cabcd_step(D, q):
    """``F^q(D)``: ``1/(D^q + 1)`` for ``D >= 1``, 1/2 at 0, ``1 - F^q(-D)`` below."""
    D = np.asarray(D, dtype=float)
    q = np.asarray(q, dtype=float)
    a = np.abs(D)
    with np.errstate(over="ignore"):
        upper = 1.0 / (np.power(np.maximum(a, 1.0), q) + 1.0)
    out = np.where(D > 0, upper, np.where(D < 0, 1.0 - upper, 0.5))
    return out if out.ndim else float(out)


def inverse_probability(p):
    return 1.0 / np.asarray(p, dtype=float)


@dataclass(frozen=True)
class CAbcd(StrataRule):
    """Covariate-adjusted ABCD: ``F^{q(p_jl)}`` applied to the stratum imbalance.

    ``probs`` fixes known stratum probabilities; otherwise the running
    frequencies ``N(j,l)/n`` are used.
    """

    q: Callable = inverse_probability
    probs: Optional[tuple] = None
    kind: ClassVar[str] = "CAbcd"

    def _stratum_prob(self, N, j, l, probs):
        if self.probs is not None:
            return np.asarray(self.probs, dtype=float)[j, l]
        if probs is not None:
            return np.asarray(probs, dtype=float)[j, l]
        n = np.maximum(N.sum(axis=(1, 2)), 1)
        return np.maximum(_gather(N, j, l), 1) / n

    def batch_probability(self, N, NA, j, l, probs=None):
        _, _, _, cell = _batch_imbalances(N, NA, j, l)
        return np.asarray(cabcd_step(cell, self.q(self._stratum_prob(N, j, l, probs))), dtype=float)

    def cell_map(self, pi, p):
        return _sign_rule(2 * pi - 1, 1.0)


def atkinson_stratified(pi):
    """``(1-pi)^2 / ((1-pi)^2 + pi^2)``."""
    pi = np.asarray(pi, dtype=float)
    out = (1 - pi) ** 2 / ((1 - pi) ** 2 + pi**2)
    return out if out.ndim else float(out)


def atkinson_from_score(v):
    """``(1 - v)^2 / ((1 - v)^2 + (1 + v)^2)`` with ``v = x'(F'F)^-1 b``."""
    v = np.asarray(v, dtype=float)
    out = (1 - v) ** 2 / ((1 - v) ** 2 + (1 + v) ** 2)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Atkinson(StrataRule):
    """D-optimal biased coin for the saturated stratum model."""

    kind: ClassVar[str] = "Atkinson"

    def batch_probability(self, N, NA, j, l, probs=None):
        n_cell = _gather(N, j, l)
        pi = _gather(NA, j, l) / np.maximum(n_cell, 1)
        return np.where(n_cell > 0, atkinson_stratified(pi), 0.5)

    def cell_map(self, pi, p):
        return atkinson_stratified(pi)


def cell_features(J: int, L: int, interactions: bool = True) -> np.ndarray:
    """Rows ``f(j,l)``: intercept, T dummies, W dummies, optional T x W dummies."""
    rows = []
    for j in range(J + 1):
        for l in range(L + 1):
            row = [1.0]
            row += [float(j == a) for a in range(1, J + 1)]
            row += [float(l == b) for b in range(1, L + 1)]
            if interactions:
                row += [float(j == a and l == b) for a in range(1, J + 1) for b in range(1, L + 1)]
            rows.append(row)
    return np.array(rows)


@dataclass(frozen=True)
class AtkinsonScore:
    value: np.ndarray
    ridge_used: np.ndarray


def atkinson_scores(N, NA, j, l, interactions: bool = True) -> AtkinsonScore:
    """``f(j,l)' (F'F)^-1 F'(2 delta - 1)`` for a batch of tables.

    Singular normal matrices get a ridge of ``1e-8`` and are flagged.
    """
    N = np.asarray(N, dtype=float)
    R, J1, L1 = N.shape
    C = cell_features(J1 - 1, L1 - 1, interactions)
    w = N.reshape(R, -1)
    D = (2 * np.asarray(NA, dtype=float) - N).reshape(R, -1)
    M = np.einsum("rc,cp,cq->rpq", w, C, C)
    b = D @ C
    eig = np.linalg.eigvalsh(M)
    singular = eig[:, 0] <= 1e-10 * np.maximum(eig[:, -1], 1.0)
    M = M + np.where(singular, ATKINSON_RIDGE, 0.0)[:, None, None] * np.eye(C.shape[1])
    sol = np.linalg.solve(M, b[..., None])[..., 0]
    x = C[np.asarray(j) * L1 + np.asarray(l)]
    return AtkinsonScore(np.einsum("rp,rp->r", x, sol), singular)


@dataclass(frozen=True)
class AtkinsonGeneral(StrataRule):
    """D-optimal biased coin for a linear model in the covariate dummies."""

    interactions: bool = True
    kind: ClassVar[str] = "AtkinsonGeneral"

    def batch_probability(self, N, NA, j, l, probs=None):
        return atkinson_from_score(atkinson_scores(N, NA, j, l, self.interactions).value)

    def cell_map(self, pi, p):
        if not self.interactions:
            raise NotImplementedError("cell map is only closed-form for the saturated model")
        return atkinson_stratified(pi)


def rdbcd_exponent(z):
    """``nu(z) = (1 - z) / z``."""
    z = np.asarray(z, dtype=float)
    return (1.0 - z) / z


@dataclass(frozen=True)
class RDBCD(StrataRule):
    """Stratified doubly-adaptive coin toward a fixed target table.

    The exponent depends on the stratum frequency ``z`` through ``nu(z)``.
    """

    targets: tuple = ((0.5, 0.5), (0.5, 0.5))
    probs: Optional[tuple] = None
    exponent: Callable = rdbcd_exponent
    kind: ClassVar[str] = "RDBCD"
    design_class: ClassVar[str] = "CARA"
    balance: ClassVar[bool] = False

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=float)
        if t.ndim != 2 or np.any(t <= 0) or np.any(t >= 1):
            raise InvalidRuleError("targets must be a matrix with entries in (0, 1)")
        object.__setattr__(self, "targets", tuple(tuple(float(v) for v in r) for r in t))

    @property
    def target_table(self) -> np.ndarray:
        return np.asarray(self.targets)

    def allocation(self, x, y, z):
        return dbcd_power(x, y, y, self.exponent(z))

    def batch_probability(self, N, NA, j, l, probs=None):
        n_cell = _gather(N, j, l)
        x = _gather(NA, j, l) / np.maximum(n_cell, 1)
        y = self.target_table[j, l]
        if self.probs is not None or probs is not None:
            z = np.asarray(self.probs if self.probs is not None else probs, dtype=float)[j, l]
        else:
            z = np.maximum(n_cell, 1) / np.maximum(N.sum(axis=(1, 2)), 1)
        return np.where(n_cell > 0, self.allocation(x, y, z), 0.5)

    def cell_map(self, pi, p):
        return self.allocation(pi, self.target_table, p)


STRATA_RULES = (PocockSimon, HuHu, CAbcd, Atkinson, AtkinsonGeneral, RDBCD)


def strata_probability(rule: StrataRule, table: StratumTable, stratum, probs=None) -> float:
    """Probability of A for the next subject arriving in ``stratum``."""
    j, l = stratum
    if not (0 <= j <= table.J and 0 <= l <= table.L):
        raise IndexError(f"stratum {stratum!r} outside the table")
    out = rule.batch_probability(
        table.sizes[None], table.a_counts[None], np.array([j]), np.array([l]), probs
    )
    return float(np.asarray(out)[0])


@dataclass(frozen=True)
class StrataLimit:
    cells: np.ndarray
    overall: float
    residual: float


def strata_limit(rule: StrataRule, probs) -> StrataLimit:
    """Limiting cell proportions and the overall limiting proportion.

    ``residual`` is ``max |phi(t) - t|`` of the rule's large-sample cell
    map at the reported limit.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 2 or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidDistributionError("stratum probabilities must be positive and sum to 1")
    if rule.balance:
        t = np.full(p.shape, 0.5)
    else:
        t = rule.target_table
        if t.shape != p.shape:
            raise InvalidDistributionError("target table and distribution shapes differ")
    try:
        residual = float(np.max(np.abs(np.asarray(rule.cell_map(t, p)) - t)))
    except NotImplementedError:
        residual = math.nan
    return StrataLimit(t, float((t * p).sum()), residual)
