"""Grid and fuzz checks of the structural properties each rule relies on.

Every check returns a ``PropertyResult``; nothing here raises on a failed
property, so a report can list all failures at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .designs_aa import (
    ABCD,
    AaRule,
    AaStar,
    CompleteRandomization,
    EfronBCD,
    WeiAdaptive,
    aa_limit_result,
)
from .designs_cara import CaraRule, ZhangHu
from .designs_ra import DAWD, DBCD, RaRule, check_dawd_functions, dbcd_power, ra_limit_result
from .designs_strata import (
    CAbcd,
    RDBCD,
    StrataRule,
    StratumTable,
    cabcd_step,
    global_imbalance,
    global_imbalance_from_cells,
    integer_imbalances,
    marginal_imbalance,
)
from .downcrossing import verify_downcrossing
from .errors import AllocationError

GRID = np.linspace(0.0, 1.0, 1001)
INNER = np.linspace(0.01, 0.99, 99)
SLACK = 1e-12


@dataclass(frozen=True)
class PropertyResult:
    name: str
    ok: bool
    detail: str = ""
    witnesses: tuple = ()

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        text = f"{status}  {self.name}"
        if self.detail:
            text += f"  ({self.detail})"
        return text


def _result(name, bad_mask, points, detail_ok="", max_witnesses=5):
    bad = np.flatnonzero(np.ravel(bad_mask))
    if bad.size == 0:
        return PropertyResult(name, True, detail_ok)
    pts = [points[i] for i in bad[:max_witnesses]]
    return PropertyResult(name, False, f"{bad.size} violation(s), e.g. at {pts[0]}", tuple(pts))


def _rising(values, xs, name):
    """Flag consecutive grid pairs where ``values`` increases."""
    rises = np.diff(values, axis=-1) > SLACK
    pts = [(float(xs[i]), float(xs[i + 1])) for i in range(len(xs) - 1)]
    if rises.ndim > 1:
        idx = np.argwhere(rises)
        pts_all = [pts[k[-1]] for k in idx]
        return _result(name, np.ones(len(idx), bool), pts_all) if len(idx) else PropertyResult(name, True)
    return _result(name, rises, pts)


# -- fuzzing ---------------------------------------------------------------------


def fuzz_probabilities(design, cases: int = 100_000, seed: int = 0, covariates=None) -> PropertyResult:
    """Random inputs: probabilities in [0, 1] and arm probabilities summing to one."""
    rng = np.random.default_rng(seed)
    name = "probability range and sum to one"
    if isinstance(design, AaRule):
        counts = rng.integers(0, 1000, size=(cases, design.K))
        probs = np.asarray(design.probabilities(counts), dtype=float)
        bad = (
            np.any(~np.isfinite(probs) | (probs < 0) | (probs > 1), axis=1)
            | (np.abs(probs.sum(axis=1) - 1.0) > 1e-12)
        )
        return _result(name, bad, [tuple(c) for c in counts], f"{cases} cases")
    if isinstance(design, RaRule):
        x = rng.random(cases)
        est = rng.uniform(0.01, 0.99, size=(cases, 2))
        pa = np.asarray(design.allocation(x, design.target_value(est)), dtype=float)
    elif isinstance(design, CaraRule):
        x = rng.random(cases)
        est = rng.normal(size=(cases, 4))
        z = rng.normal(size=cases)
        rho = rng.uniform(0.01, 0.99, size=cases) if design.needs_rho else None
        pa = np.asarray(design.probability(x, est, z, rho), dtype=float)
    elif isinstance(design, StrataRule):
        shape = (2, 2) if covariates is None else covariates.shape
        N = rng.integers(0, 50, size=(cases,) + shape)
        NA = rng.integers(0, N + 1)
        j = rng.integers(0, shape[0], size=cases)
        l = rng.integers(0, shape[1], size=cases)
        pa = np.asarray(design.batch_probability(N, NA, j, l), dtype=float)
    else:
        return PropertyResult(name, False, f"unknown rule type {type(design).__name__}")
    pa = np.broadcast_to(pa, (cases,))
    bad = ~np.isfinite(pa) | (pa < 0) | (pa > 1)
    return _result(name, bad, list(range(cases)), f"{cases} cases")


# -- monotonicity ------------------------------------------------------------------


def monotone_in_pi(design, seed: int = 0, covariates=None, probes: int = 200) -> PropertyResult:
    """The probability of A never increases with the current proportion on A."""
    rng = np.random.default_rng(seed)
    name = "nonincreasing in the allocation proportion"
    if isinstance(design, AaRule):
        if design.K > 2:
            return _monotone_vector(design, rng, name)
        if isinstance(design, ABCD):
            vals = np.stack([design.step_function(n)(GRID) for n in (1, 2, 5, 10, 100, 1000)])
        else:
            vals = np.asarray(design.allocation_function(GRID), dtype=float)
        return _rising(vals, GRID, name)
    if isinstance(design, RaRule):
        est = rng.uniform(0.01, 0.99, size=(probes, 1, 2))
        y = design.target_value(est)
        vals = np.asarray(design.allocation(GRID[None, :], y), dtype=float)
        return _rising(np.broadcast_to(vals, (probes, GRID.size)), GRID, name)
    if isinstance(design, CaraRule):
        est = rng.normal(size=(probes, 1, 4))
        z = rng.normal(size=(probes, 1))
        rho = rng.uniform(0.01, 0.99, size=(probes, 1)) if design.needs_rho else None
        vals = np.asarray(design.probability(GRID[None, :], est, z, rho), dtype=float)
        return _rising(np.broadcast_to(vals, (probes, GRID.size)), GRID, name)
    if isinstance(design, StrataRule):
        return _monotone_strata(design, rng, covariates, probes * 50, name)
    return PropertyResult(name, False, f"unknown rule type {type(design).__name__}")


def _monotone_vector(design, rng, name):
    K = design.K
    xs = INNER
    bad_pts = []
    for _ in range(50):
        base = rng.uniform(0.01, 0.99, size=K)
        for k in range(K):
            pts = np.repeat(base[None, :], xs.size, axis=0)
            pts[:, k] = xs
            comp = np.asarray(design.allocation_function(pts), dtype=float)[:, k]
            rises = np.flatnonzero(np.diff(comp) > SLACK)
            bad_pts += [(k, float(xs[i]), float(xs[i + 1])) for i in rises]
    return _result(name, np.ones(len(bad_pts), bool), bad_pts) if bad_pts else PropertyResult(name, True)


def _monotone_strata(design, rng, covariates, cases, name):
    """Move one subject of the arriving stratum from B to A; the probability may not rise."""
    shape = (2, 2) if covariates is None else covariates.shape
    N = rng.integers(1, 40, size=(cases,) + shape)
    NA = rng.integers(0, N)
    j = rng.integers(0, shape[0], size=cases)
    l = rng.integers(0, shape[1], size=cases)
    r = np.arange(cases)
    NA2 = NA.copy()
    NA2[r, j, l] += 1
    before = np.asarray(design.batch_probability(N, NA, j, l), dtype=float)
    after = np.asarray(design.batch_probability(N, NA2, j, l), dtype=float)
    bad = after > before + 1e-12
    return _result(name, bad, list(zip(j.tolist(), l.tolist())), f"{cases} probes")


# -- rule-specific conditions ----------------------------------------------------------


SYMMETRIC_AA = (CompleteRandomization, EfronBCD, WeiAdaptive, ABCD)


def aa_symmetry(design) -> PropertyResult:
    name = "symmetric: phi(1 - x) = 1 - phi(x)"
    if isinstance(design, ABCD):
        f = design.step_function(7)
    else:
        f = design.allocation_function
    a = np.asarray(f(GRID), dtype=float)
    b = np.asarray(f(1.0 - GRID), dtype=float)
    return _result(name, np.abs(b - (1 - a)) > 1e-12, GRID.tolist())


def downcrossing_check(design, model=None) -> PropertyResult:
    name = "limit satisfies the downcrossing inequalities"
    try:
        if isinstance(design, AaRule):
            if isinstance(design, ABCD):
                f, t = design.step_function(10), 0.5
            else:
                res = aa_limit_result(design)
                f, t = design.allocation_function, float(res.t)
        else:
            params = model.params if model is not None else np.array([0.7, 0.5])
            res = ra_limit_result(design, params)
            y = design.target_value(params)
            t = float(res.t)

            def f(x):
                return design.allocation(x, y)

    except AllocationError as exc:
        return PropertyResult(name, False, str(exc))
    ver = verify_downcrossing(f, t)
    pts = [(x, y, side) for x, y, side in ver.violations]
    if ver.ok:
        return PropertyResult(name, True, f"t = {t:.6g}")
    return PropertyResult(name, False, f"t = {t:.6g}, {len(pts)} violation(s)", tuple(pts[:5]))


def _grid_points(coords, axis=None):
    """Coordinates of grid points, trimmed to match ``np.diff`` along ``axis``."""
    if axis is not None:
        coords = [np.take(c, np.arange(c.shape[axis] - 1), axis=axis) for c in coords]
    return list(zip(*(c.ravel().tolist() for c in coords)))


def dbcd_conditions(allocation) -> list:
    """Continuity, fixed diagonal, monotonicity and symmetry of ``allocation(x, y)``."""
    x, y = np.meshgrid(INNER, INNER, indexing="ij")
    v = np.asarray(allocation(x, y), dtype=float)
    pts = _grid_points((x, y))
    fine = np.linspace(0.01, 0.99, 9801)
    jumps = [np.max(np.abs(np.diff(np.asarray(allocation(fine, yy), dtype=float)))) for yy in INNER]
    return [
        PropertyResult(
            "continuous on (0,1)^2",
            bool(max(jumps) < 1e-2),
            f"largest step between neighbours {max(jumps):.2e}",
        ),
        _result("phi(x; x) = x", np.abs(np.diagonal(v) - INNER) > 1e-12, INNER.tolist()),
        _result("decreasing in x", np.diff(v, axis=0) > SLACK, _grid_points((x, y), 0)),
        _result("increasing in y", np.diff(v, axis=1) < -SLACK, _grid_points((x, y), 1)),
        _result(
            "phi(x; y) = 1 - phi(1 - x; 1 - y)",
            np.abs(v - (1 - np.asarray(allocation(1 - x, 1 - y), dtype=float))) > 1e-12,
            pts,
        ),
    ]


def rdbcd_conditions(design: RDBCD) -> list:
    x, y, z = np.meshgrid(INNER[::4], INNER[::4], INNER[::4], indexing="ij")
    v = np.asarray(design.allocation(x, y, z), dtype=float)
    pts = _grid_points((x, y, z))
    dz = np.diff(v, axis=2)
    below = (x < y)[:, :, :-1] & (x < y)[:, :, 1:]
    above = (x > y)[:, :, :-1] & (x > y)[:, :, 1:]
    dx, dy = np.meshgrid(INNER, INNER[::4], indexing="ij")
    diag = np.asarray(design.allocation(dx, dx, dy), dtype=float)
    return [
        _result("decreasing in x", np.diff(v, axis=0) > SLACK, _grid_points((x, y, z), 0)),
        _result("increasing in y", np.diff(v, axis=1) < -SLACK, _grid_points((x, y, z), 1)),
        _result("phi(x; x, z) = x", np.abs(diag - dx) > 1e-12, _grid_points((dx, dy))),
        _result("decreasing in z below the target", below & (dz > SLACK), _grid_points((x, y, z), 2)),
        _result("increasing in z above the target", above & (dz < -SLACK), _grid_points((x, y, z), 2)),
        _result(
            "phi(x; y, z) = 1 - phi(1 - x; 1 - y, z)",
            np.abs(v - (1 - np.asarray(design.allocation(1 - x, 1 - y, z), dtype=float))) > 1e-12,
            pts,
        ),
    ]


def dawd_conditions(design: DAWD) -> PropertyResult:
    try:
        check_dawd_functions(design.g1, design.g2, points=2001)
    except AllocationError as exc:
        return PropertyResult("weighting functions g1, g2", False, str(exc))
    return PropertyResult("weighting functions g1, g2", True)


def cabcd_symmetry(design: CAbcd) -> PropertyResult:
    D = np.arange(-200, 201)
    bad = []
    for p in (0.05, 0.1, 0.25, 0.5, 0.9):
        q = design.q(p)
        f = np.asarray(cabcd_step(D, q))
        bad += [(int(d), p) for d in D[np.abs(np.asarray(cabcd_step(-D, q)) - (1 - f)) > 1e-12]]
        bad += [(int(D[i]), p) for i in np.flatnonzero(np.diff(f) > SLACK)]
    name = "F symmetric F(-x) = 1 - F(x) and nonincreasing"
    return _result(name, np.ones(len(bad), bool), bad) if bad else PropertyResult(name, True)


def zhang_hu_identity(design: ZhangHu) -> PropertyResult:
    y, b = np.meshgrid(np.linspace(0.01, 0.99, 50), np.linspace(0.01, 0.99, 50), indexing="ij")
    v = dbcd_power(y, y, b, design.nu)
    return _result("phi(y; y, b) = b", np.abs(v - b) > 1e-12, list(zip(y.ravel(), b.ravel())))


def imbalance_identities(shape=(2, 2), cases: int = 2000, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    bad_marg, bad_glob = [], []
    for c in range(cases):
        N = rng.integers(0, 30, size=shape)
        N.flat[rng.integers(N.size)] += 1
        table = StratumTable.from_arrays(N, rng.integers(0, N + 1))
        imb = integer_imbalances(table)
        n = table.n
        for j in range(shape[0]):
            if abs(imb.rows[j] - n * marginal_imbalance(table, "T", j)) > 1e-9:
                bad_marg.append(c)
        for l in range(shape[1]):
            if abs(imb.cols[l] - n * marginal_imbalance(table, "W", l)) > 1e-9:
                bad_marg.append(c)
        if abs(global_imbalance(table) - global_imbalance_from_cells(table)) > 1e-12:
            bad_glob.append(c)
    return [
        _result("integer margins equal n times marginal imbalance", np.ones(len(bad_marg), bool), bad_marg)
        if bad_marg
        else PropertyResult("integer margins equal n times marginal imbalance", True, f"{cases} tables"),
        _result("2 pi_n - 1 equals the cell sum", np.ones(len(bad_glob), bool), bad_glob)
        if bad_glob
        else PropertyResult("2 pi_n - 1 equals the cell sum", True, f"{cases} tables"),
    ]


def balanced_fixed_point(design, covariates=None) -> PropertyResult:
    """Balance rules give exactly 1/2 on a fully balanced table."""
    shape = (2, 2) if covariates is None else covariates.shape
    N = np.full((1,) + shape, 6)
    NA = N // 2
    out = [
        float(np.asarray(design.batch_probability(N, NA, np.array([j]), np.array([l])))[0])
        for j in range(shape[0])
        for l in range(shape[1])
    ]
    bad = np.abs(np.array(out) - 0.5) > 0
    return _result("exactly 1/2 on a balanced table", bad, [(j, l) for j in range(shape[0]) for l in range(shape[1])])


def verify_design(design, model=None, covariates=None, cases: int = 100_000, seed: int = 0) -> list:
    """All applicable property checks for ``design``."""
    out = [fuzz_probabilities(design, cases, seed, covariates), monotone_in_pi(design, seed, covariates)]
    if isinstance(design, AaRule):
        if design.K == 2 and isinstance(design, SYMMETRIC_AA):
            out.append(aa_symmetry(design))
        if design.K == 2 and not isinstance(design, (AaStar,)) and out[1].ok:
            out.append(downcrossing_check(design))
    elif isinstance(design, RaRule):
        if isinstance(design, DBCD):
            out += dbcd_conditions(design.allocation)
        if isinstance(design, DAWD):
            out.append(dawd_conditions(design))
        out.append(downcrossing_check(design, model))
    elif isinstance(design, CaraRule):
        if isinstance(design, ZhangHu):
            out.append(zhang_hu_identity(design))
            out += dbcd_conditions(lambda x, y: dbcd_power(x, y, y, design.nu))
    elif isinstance(design, StrataRule):
        if isinstance(design, RDBCD):
            out += rdbcd_conditions(design)
        else:
            out.append(balanced_fixed_point(design, covariates))
        if isinstance(design, CAbcd):
            out.append(cabcd_symmetry(design))
        out += imbalance_identities(covariates.shape if covariates is not None else (2, 2))
    return out
