"""Allocation state and trial history bookkeeping.

Counts are kept as exact integers; proportions are derived on demand.
Both types are immutable: ``update`` and ``TrialHistory.append`` return
new objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .errors import UndefinedProportionError, UnsupportedArityError


@dataclass(frozen=True)
class AllocationState:
    """Running assignment counts for ``K`` arms after ``n`` steps."""

    n: int
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) < 2:
            raise ValueError("need at least two arms")
        if any(c < 0 for c in counts):
            raise ValueError("counts must be nonnegative")
        if sum(counts) != self.n:
            raise ValueError(f"counts sum to {sum(counts)}, expected n={self.n}")

    @classmethod
    def empty(cls, K: int = 2) -> "AllocationState":
        return cls(0, (0,) * K)

    @property
    def K(self) -> int:
        return len(self.counts)

    def proportions(self) -> np.ndarray:
        return proportion(self)


def update(state: AllocationState, arm: int) -> AllocationState:
    if not 0 <= arm < state.K:
        raise IndexError(f"arm {arm} out of range for K={state.K}")
    counts = list(state.counts)
    counts[arm] += 1
    return AllocationState(state.n + 1, tuple(counts))


def proportion(state: AllocationState) -> np.ndarray:
    if state.n == 0:
        raise UndefinedProportionError("allocation proportion undefined at n=0")
    return np.asarray(state.counts, dtype=float) / state.n


def imbalance(state: AllocationState) -> int:
    """``D_n = 2 * counts[0] - n`` for two-arm trials."""
    if state.K != 2:
        raise UnsupportedArityError(f"imbalance needs K=2, got K={state.K}")
    return 2 * state.counts[0] - state.n


@dataclass(frozen=True)
class AssignmentRecord:
    step: int
    arm: int
    covariate: Optional[Any] = None
    response: Optional[float] = None


@dataclass(frozen=True)
class TrialHistory:
    """Ordered assignment records plus the state they imply.

    This is the information a design is allowed to read; the estimator
    views (``arms``, ``responses``, ``covariates``) return numpy arrays.
    """

    records: tuple[AssignmentRecord, ...] = ()
    state: AllocationState = field(default_factory=AllocationState.empty)

    @classmethod
    def empty(cls, K: int = 2) -> "TrialHistory":
        return cls((), AllocationState.empty(K))

    @classmethod
    def from_records(cls, records: Sequence[AssignmentRecord], K: int = 2) -> "TrialHistory":
        hist = cls.empty(K)
        for rec in records:
            hist = hist.append(rec)
        return hist

    def append(self, record: AssignmentRecord) -> "TrialHistory":
        if self.records and record.step <= self.records[-1].step:
            raise ValueError(
                f"step {record.step} does not follow step {self.records[-1].step}"
            )
        return TrialHistory(self.records + (record,), update(self.state, record.arm))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def K(self) -> int:
        return self.state.K

    def arms(self) -> np.ndarray:
        return np.array([r.arm for r in self.records], dtype=int)

    def responses(self) -> np.ndarray:
        return np.array(
            [np.nan if r.response is None else float(r.response) for r in self.records]
        )

    def covariates(self) -> list:
        return [r.covariate for r in self.records]


def replay(records: Sequence[AssignmentRecord], K: int = 2) -> AllocationState:
    state = AllocationState.empty(K)
    for rec in records:
        state = update(state, rec.arm)
    return state
