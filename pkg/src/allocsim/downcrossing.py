"""Downcrossing solvers for scalar, generalized and vectorial allocation maps.

A point ``t`` is a downcrossing of ``psi`` when ``psi(x) >= t`` for every
``x < t`` and ``psi(x) <= t`` for every ``x > t``.  For a nonincreasing
``psi`` the map ``g(x) = psi(x) - x`` is strictly decreasing, so bisection
on the sign of ``g`` always brackets it, including when ``psi`` is a step
function whose graph jumps over the diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import (
    BoundaryDowncrossingError,
    ConvergenceError,
    DomainError,
    InvalidWitnessError,
    NotMonotoneError,
)

DEFAULT_TOL = 1e-10
VECTOR_TOL = 1e-8
TOL_FLOOR = 4 * np.finfo(float).eps
MAX_BISECTIONS = 200
PROBE_POINTS = 64
MAX_SWEEPS = 50

FIXED_POINT = "fixed-point"
JUMP = "jump"


@dataclass(frozen=True)
class ScalarMap:
    """A map [0,1] -> [0,1] claimed to be nonincreasing."""

    evaluator: Callable[[float], float]
    nonincreasing: bool = True

    def __call__(self, x):
        return self.evaluator(x)


@dataclass(frozen=True)
class VectorMap:
    """A map [0,1]^K -> [0,1]^K, each component nonincreasing componentwise."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    K: int

    def __call__(self, x):
        return np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class DowncrossingResult:
    t: Union[float, np.ndarray]
    residual: float
    bracket_width: float
    iterations: int
    kind: str = FIXED_POINT


@dataclass
class Verification:
    """Outcome of a grid check of the downcrossing inequalities.

    ``violations`` holds ``(x, psi(x), side)`` triples where ``side`` is
    ``"left"`` (x < t but psi(x) < t) or ``"right"`` (x > t but psi(x) > t).
    """

    ok: bool
    violations: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def _call(f, x: float) -> float:
    v = float(f(x))
    if math.isnan(v) or v < 0.0 or v > 1.0:
        raise DomainError(f"allocation map returned {v!r} at x={x!r}, outside [0,1]")
    return v


def _call_many(f, xs: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(f(xs), dtype=float)
        if out.shape != xs.shape:
            raise ValueError
    except Exception:
        out = np.array([float(f(x)) for x in xs])
    if np.any(np.isnan(out)) or np.any(out < 0.0) or np.any(out > 1.0):
        bad = int(np.flatnonzero(np.isnan(out) | (out < 0) | (out > 1))[0])
        raise DomainError(
            f"allocation map returned {out[bad]!r} at x={xs[bad]!r}, outside [0,1]"
        )
    return out


def check_monotone(f, points: int = PROBE_POINTS, slack: float = 1e-12) -> None:
    """Spot-check that ``f`` is nonincreasing on a uniform probe grid."""
    xs = np.linspace(0.0, 1.0, points)
    ys = _call_many(f, xs)
    rises = np.flatnonzero(np.diff(ys) > slack)
    if rises.size:
        witnesses = [(xs[i], xs[i + 1], ys[i], ys[i + 1]) for i in rises]
        raise NotMonotoneError(
            f"map increases on {rises.size} probe interval(s), first between "
            f"x={xs[rises[0]]:.6g} and x={xs[rises[0] + 1]:.6g}",
            witnesses,
        )


def _bisect_sign(g, lo: float, hi: float, tol: float, max_iter: int):
    """Shrink [lo, hi] keeping g(lo) >= 0 > g(hi)."""
    it = 0
    while hi - lo > tol and it < max_iter:
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
        it += 1
    return lo, hi, it


def _gap(f, t: float, eps: float) -> float:
    return _call(f, max(t - eps, 0.0)) - _call(f, min(t + eps, 1.0))


def find_downcrossing(
    f,
    tol: float = DEFAULT_TOL,
    *,
    max_iter: int = MAX_BISECTIONS,
    check: bool = True,
) -> DowncrossingResult:
    """Locate the interior downcrossing of a nonincreasing map on [0,1].

    Returns the exact fixed point when the bisection lands on it, else the
    bracket midpoint. ``kind`` is ``"jump"`` when the map is discontinuous
    at ``t`` (the graph crosses the diagonal on a vertical segment).
    """
    if not tol >= TOL_FLOOR:
        raise ValueError(f"tol={tol!r} below floor {TOL_FLOOR:.3g}")
    if isinstance(f, ScalarMap) and not f.nonincreasing:
        raise NotMonotoneError("map does not claim to be nonincreasing")
    if check:
        check_monotone(f)

    def g(x):
        return _call(f, x) - x

    lo, hi, iterations = _bisect_sign(g, 0.0, 1.0, tol, max_iter)
    g_lo, g_hi = g(lo), g(hi)
    if g_lo == 0.0:
        t = lo
    elif g_hi == 0.0:
        t = hi
    else:
        t = 0.5 * (lo + hi)
    if t <= tol or t >= 1.0 - tol:
        raise BoundaryDowncrossingError(
            f"downcrossing at boundary t={t:.3g}; only interior downcrossings are supported"
        )

    residual = abs(_call(f, t) - t)
    near = _gap(f, t, tol)
    far = _gap(f, t, max(math.sqrt(tol), 1e-6))
    jump = residual > tol or (near > tol and near > 0.5 * far)
    if jump:
        left, right = _call(f, max(t - tol, 0.0)), _call(f, min(t + tol, 1.0))
        if left < t - tol or right > t + tol:
            raise ConvergenceError(
                f"jump at t={t!r} fails the local downcrossing check", last_iterate=t
            )
    if check:
        ver = verify_downcrossing(f, t, grid_size=PROBE_POINTS - 1, atol=10 * tol)
        if not ver.ok:
            raise ConvergenceError(
                f"t={t!r} violates the downcrossing inequalities at "
                f"{len(ver.violations)} probe point(s)",
                last_iterate=t,
            )
    return DowncrossingResult(
        t=t,
        residual=residual,
        bracket_width=hi - lo,
        iterations=iterations,
        kind=JUMP if jump else FIXED_POINT,
    )


def find_generalized_downcrossing(psi, y, tol: float = DEFAULT_TOL) -> DowncrossingResult:
    """Downcrossing of ``x -> psi(x, y)`` at a frozen parameter value ``y``."""
    return find_downcrossing(lambda x: psi(x, y), tol)


def verify_downcrossing(f, t: float, grid_size: int = 1000, atol: float = 1e-9) -> Verification:
    """Check both downcrossing inequalities on the grid ``i / grid_size``."""
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    xs = np.arange(grid_size + 1) / grid_size
    xs = xs[np.abs(xs - t) > 1e-15]
    ys = _call_many(f, xs)
    left = (xs < t) & (ys < t - atol)
    right = (xs > t) & (ys > t + atol)
    violations = [(float(x), float(y), "left") for x, y in zip(xs[left], ys[left])]
    violations += [(float(x), float(y), "right") for x, y in zip(xs[right], ys[right])]
    violations.sort()
    return Verification(not violations, violations)


def _vector_call(F, x: np.ndarray) -> np.ndarray:
    out = np.asarray(F(x), dtype=float)
    if out.shape != x.shape:
        raise DomainError(f"vector map returned shape {out.shape}, expected {x.shape}")
    if np.any(np.isnan(out)) or np.any(out < 0.0) or np.any(out > 1.0):
        raise DomainError(f"vector map left [0,1]^K at x={x!r}: {out!r}")
    return out


def _component(F, x: np.ndarray, j: int):
    def fj(s):
        z = x.copy()
        z[j] = s
        return _vector_call(F, z)[j]

    return fj


def find_vectorial_downcrossing(
    F,
    K: Optional[int] = None,
    tol: float = VECTOR_TOL,
    max_iter: int = 10_000,
    *,
    damping: float = 0.5,
    x0: Optional[np.ndarray] = None,
    check: bool = True,
) -> DowncrossingResult:
    """Vectorial downcrossing by damped fixed-point iteration.

    Falls back to round-robin coordinate bisection sweeps when the damped
    iteration stalls.
    """
    if K is None:
        K = getattr(F, "K", None)
        if K is None:
            raise ValueError("K is required for a bare callable")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    x = np.full(K, 0.5) if x0 is None else np.array(x0, dtype=float)

    residual = math.inf
    iterations = 0
    # Iterate well past tol so the distance to the root, not just the residual, is within tol.
    polish = tol * 1e-3
    for iterations in range(1, max_iter + 1):
        fx = _vector_call(F, x)
        residual = float(np.max(np.abs(fx - x)))
        if residual <= polish:
            break
        x = (1.0 - damping) * x + damping * fx

    step = damping * residual
    kind = FIXED_POINT
    if residual > tol:
        for _ in range(MAX_SWEEPS):
            previous = x.copy()
            for j in range(K):
                fj = _component(F, x, j)
                lo, hi, n_it = _bisect_sign(
                    lambda s: fj(s) - s, 0.0, 1.0, tol * 1e-2, MAX_BISECTIONS
                )
                iterations += n_it
                x[j] = 0.5 * (lo + hi)
            residual = float(np.max(np.abs(_vector_call(F, x) - x)))
            if residual <= tol:
                break
            if np.max(np.abs(x - previous)) <= tol:
                # Coordinates are stationary but the map jumps across the diagonal.
                kind = JUMP
                break
        step = tol * 1e-2
        if residual > tol and kind != JUMP:
            raise ConvergenceError(
                f"vectorial solver did not reach tol={tol:g} (residual {residual:.3g})",
                last_iterate=x.copy(),
            )

    if check:
        for j in range(K):
            ver = verify_downcrossing(
                _component(F, x, j), x[j], grid_size=PROBE_POINTS - 1, atol=10 * tol
            )
            if not ver.ok:
                raise ConvergenceError(
                    f"component {j} violates the downcrossing inequalities",
                    last_iterate=x.copy(),
                )
    return DowncrossingResult(
        t=x, residual=residual, bracket_width=min(step, residual), iterations=iterations, kind=kind
    )


def invert_increasing(h, d: float, tol: float = 1e-14) -> float:
    """Solve ``h(x) = d`` on [0,1] for continuous increasing ``h``."""
    lo_v, hi_v = float(h(0.0)), float(h(1.0))
    if not lo_v <= d <= hi_v:
        raise InvalidWitnessError(f"d={d!r} outside the range [{lo_v}, {hi_v}] of h2")
    lo, hi, _ = _bisect_sign(lambda x: d - float(h(x)), 0.0, 1.0, tol, MAX_BISECTIONS)
    return 0.5 * (lo + hi)


def composite_downcrossing(
    h1, h2, d: float, tol: float = DEFAULT_TOL, witness_tol: float = 1e-9
) -> float:
    """Limit of a composite rule ``h1(h2(x))`` from a witness ``d``.

    Requires ``h1(d) == h2^{-1}(d)``; the answer is cross-checked against
    a direct downcrossing search on the composition.
    """
    x_d = invert_increasing(h2, d)
    if abs(float(h1(d)) - x_d) > witness_tol:
        raise InvalidWitnessError(
            f"h1(d)={float(h1(d))!r} differs from h2^-1(d)={x_d!r}"
        )
    direct = find_downcrossing(lambda x: h1(h2(x)), tol)
    if abs(direct.t - x_d) > max(10 * tol, witness_tol):
        raise InvalidWitnessError(
            f"composition downcrossing {direct.t!r} disagrees with witness {x_d!r}"
        )
    return x_d
