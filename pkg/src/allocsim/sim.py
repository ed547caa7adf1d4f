"""Sequential trial engine, replication runner and convergence diagnostics.

All replications of a run advance together: per-replication state lives in
arrays with a leading axis of length ``R``, while the loop over patients is
serial.  Replication ``r`` draws from its own stream derived from
``(seed, r)``, so results do not depend on how replications are batched or
spread over threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .designs_aa import AaRule, aa_limit
from .designs_cara import CaraRule, ZhangHu, cara_limit
from .designs_ra import RaRule, ra_limit
from .designs_strata import StrataLimit, StrataRule, strata_limit
from .errors import ConfigurationError, MissingDiagnosticError, ReplicationError, ShapeError
from .models import (
    BinaryModel,
    CategoricalCovariate,
    LinearInteractionModel,
    StandardNormalCovariate,
    binary_estimate_from_counts,
    interaction_fit_from_sums,
)

SCHEMA_VERSION = 1
DEFAULT_STRIDE = 10

AA, RA, CARA, CA = "AA", "RA", "CARA", "CA"


def engine_kind(design) -> str:
    if isinstance(design, AaRule):
        return AA
    if isinstance(design, RaRule):
        return RA
    if isinstance(design, CaraRule):
        return CARA
    if isinstance(design, StrataRule):
        return CA
    raise ConfigurationError(f"{type(design).__name__} is not an allocation rule")


@dataclass(frozen=True)
class TrialConfig:
    """Everything that determines a simulated trial.

    ``m`` is the number of permuted blocks (one assignment per arm each)
    run before the design takes over.  ``draw_offset`` shifts the
    probability actually used for the draw away from the recorded one; it
    exists only to check that the martingale diagnostic catches mismatches.
    """

    design: object
    horizon: int
    m: int = 0
    response_model: object = None
    covariate_model: object = None
    seed: int = 0
    record_stride: int = DEFAULT_STRIDE
    draw_offset: float = 0.0

    def __post_init__(self):
        kind = engine_kind(self.design)
        if self.record_stride < 1:
            raise ConfigurationError("record_stride must be at least 1")
        if self.m < 0:
            raise ConfigurationError("m must be nonnegative")
        if self.horizon <= self.K * self.m:
            raise ConfigurationError(
                f"horizon {self.horizon} must exceed the initial stage of {self.K * self.m}"
            )
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit nonnegative integer")
        if kind == RA:
            if not isinstance(self.response_model, BinaryModel):
                raise ConfigurationError("response-adaptive designs need a binary [model]")
            if self.m < 1:
                raise ConfigurationError("response-adaptive designs need m >= 1")
        elif kind == CARA:
            if not isinstance(self.response_model, LinearInteractionModel):
                raise ConfigurationError("CARA designs need a linear interaction [model]")
            if not isinstance(self.covariate_model, StandardNormalCovariate):
                raise ConfigurationError("CARA designs need a continuous [covariates] section")
            if self.m < 1:
                raise ConfigurationError("CARA designs need m >= 1")
        elif kind == CA:
            if not isinstance(self.covariate_model, CategoricalCovariate):
                raise ConfigurationError("stratified designs need a categorical [covariates] section")
            targets = getattr(self.design, "targets", None)
            if targets is not None and np.shape(targets) != self.covariate_model.shape:
                raise ConfigurationError("target table shape differs from the strata")

    @property
    def kind(self) -> str:
        return engine_kind(self.design)

    @property
    def K(self) -> int:
        return self.design.K if isinstance(self.design, AaRule) else 2

    @property
    def estimate_names(self) -> tuple:
        if self.kind == RA:
            return ("pA", "pB")
        if self.kind == CARA:
            return ("muA", "muB", "betaA", "betaB")
        return ()

    def record_steps(self) -> np.ndarray:
        steps = list(range(self.record_stride, self.horizon + 1, self.record_stride))
        if not steps or steps[-1] != self.horizon:
            steps.append(self.horizon)
        return np.array(steps, dtype=np.int64)


@dataclass(frozen=True)
class Trajectory:
    """Thinned path of one trial.

    ``pi`` and ``martingale`` have one column per arm; ``cells`` holds the
    per-stratum proportions (NaN for empty strata) for stratified designs.
    """

    steps: np.ndarray
    pi: np.ndarray
    martingale: Optional[np.ndarray]
    estimates: Optional[np.ndarray] = None
    estimate_names: tuple = ()
    cells: Optional[np.ndarray] = None

    @property
    def final_pi(self) -> np.ndarray:
        return self.pi[-1]


@dataclass(frozen=True)
class _Batch:
    steps: np.ndarray
    pi: np.ndarray
    martingale: np.ndarray
    estimates: Optional[np.ndarray]
    cells: Optional[np.ndarray]
    counts: np.ndarray
    strata_N: Optional[np.ndarray]
    strata_NA: Optional[np.ndarray]


def _streams(seed: int, r: int):
    children = np.random.SeedSequence(entropy=seed, spawn_key=(int(r),)).spawn(3)
    return [np.random.default_rng(c) for c in children]


def _binary_estimates(successes, counts):
    est = binary_estimate_from_counts(successes, counts)
    return np.where(counts > 0, est, np.nan)


def _simulate(config: TrialConfig, reps: Sequence[int]) -> _Batch:
    design, N, K, kind = config.design, config.horizon, config.K, config.kind
    R = len(reps)
    rows = np.arange(R)
    eye = np.eye(K)

    gens = [_streams(config.seed, r) for r in reps]
    U = np.stack([g[0].random(N) for g in gens])
    Z = cell_j = cell_l = noise = None
    if kind == CARA:
        Z = np.stack([g[1].standard_normal(N) for g in gens])
    elif kind == CA:
        L1 = config.covariate_model.shape[1]
        cells = config.covariate_model.cell_from_uniform(np.stack([g[1].random(N) for g in gens]))
        cell_j, cell_l = cells // L1, cells % L1
    if kind == RA:
        noise = np.stack([g[2].random(N) for g in gens])
    elif kind == CARA:
        noise = np.stack([g[2].standard_normal(N) for g in gens])

    counts = np.zeros((R, K), dtype=np.int64)
    M = np.zeros((R, K))
    successes = np.zeros((R, 2))
    sums = {k: np.zeros((R, 2)) for k in ("n", "sz", "szz", "sy", "szy")}
    z_seen = np.zeros((R, N)) if kind == CARA else None
    strata_N = strata_NA = None
    if kind == CA:
        J1, L1 = config.covariate_model.shape
        strata_N = np.zeros((R, J1, L1), dtype=np.int64)
        strata_NA = np.zeros((R, J1, L1), dtype=np.int64)

    steps = config.record_steps()
    record_at = {int(s): t for t, s in enumerate(steps)}
    T = len(steps)
    pi_rec = np.zeros((R, T, K))
    m_rec = np.zeros((R, T, K))
    names = config.estimate_names
    est_rec = np.full((R, T, len(names)), np.nan) if names else None
    cells_rec = np.full((R, T) + strata_N.shape[1:], np.nan) if kind == CA else None

    def estimates():
        if kind == RA:
            return _binary_estimates(successes, counts)
        mu, beta = interaction_fit_from_sums(
            sums["n"], sums["sz"], sums["szz"], sums["sy"], sums["szy"]
        )
        est = np.concatenate([mu, beta], axis=1)
        return np.where(np.repeat(sums["n"] > 0, 2, axis=1), est, np.nan)

    remaining = None
    initial = K * config.m
    for i in range(N):
        n = i
        z = Z[:, i] if Z is not None else None
        if i < initial:
            if i % K == 0:
                remaining = np.ones((R, K), dtype=bool)
            left = K - i % K
            idx = np.minimum((U[:, i] * left).astype(np.int64), left - 1)
            probs = remaining / left
            arm = np.argmax(np.cumsum(remaining, axis=1) > idx[:, None], axis=1)
            remaining[rows, arm] = False
        else:
            if kind == AA:
                probs = np.asarray(design.probabilities(counts), dtype=float)
            else:
                pi_now = counts[:, 0] / max(n, 1)
                if kind == RA:
                    est = binary_estimate_from_counts(successes, counts)
                    pa = design.allocation(pi_now, design.target_value(est))
                elif kind == CARA:
                    est = estimates()
                    rho = None
                    if isinstance(design, ZhangHu) and design.target.covariate_dependent:
                        past = design.target(est[:, None, :], z_seen[:, :n])
                        rho = np.mean(np.asarray(past), axis=1)
                    pa = design.probability(pi_now, est, z, rho)
                else:
                    pa = design.batch_probability(strata_N, strata_NA, cell_j[:, i], cell_l[:, i])
                pa = np.broadcast_to(np.asarray(pa, dtype=float), (R,))
                probs = np.stack([pa, 1.0 - pa], axis=1)
            draw = probs
            if config.draw_offset:
                draw = probs.copy()
                draw[:, 0] += config.draw_offset
                draw[:, -1] -= config.draw_offset
                draw = np.clip(draw, 0.0, 1.0)
                draw /= draw.sum(axis=1, keepdims=True)
            arm = np.minimum((U[:, i, None] >= np.cumsum(draw, axis=1)).sum(axis=1), K - 1)

        onehot = eye[arm]
        M += onehot - probs
        counts += onehot.astype(np.int64)

        if kind == RA:
            y = config.response_model.response_from_noise(arm, None, noise[:, i])
            successes[rows, arm] += y
        elif kind == CARA:
            y = config.response_model.response_from_noise(arm, z, noise[:, i])
            mask = onehot[:, :2]
            sums["n"] += mask
            sums["sz"] += mask * z[:, None]
            sums["szz"] += mask * (z * z)[:, None]
            sums["sy"] += mask * y[:, None]
            sums["szy"] += mask * (z * y)[:, None]
            z_seen[:, i] = z
        elif kind == CA:
            j, l = cell_j[:, i], cell_l[:, i]
            strata_N[rows, j, l] += 1
            strata_NA[rows, j, l] += arm == 0

        t = record_at.get(i + 1)
        if t is not None:
            pi_rec[:, t] = counts / (i + 1)
            m_rec[:, t] = M
            if est_rec is not None:
                est_rec[:, t] = estimates()
            if cells_rec is not None:
                with np.errstate(invalid="ignore", divide="ignore"):
                    cells_rec[:, t] = np.where(
                        strata_N > 0, strata_NA / np.maximum(strata_N, 1), np.nan
                    )

    return _Batch(steps, pi_rec, m_rec, est_rec, cells_rec, counts, strata_N, strata_NA)


def _trajectory(config: TrialConfig, batch: _Batch, r: int) -> Trajectory:
    return Trajectory(
        steps=batch.steps,
        pi=batch.pi[r],
        martingale=batch.martingale[r],
        estimates=None if batch.estimates is None else batch.estimates[r],
        estimate_names=config.estimate_names,
        cells=None if batch.cells is None else batch.cells[r],
    )


def run_trial(config: TrialConfig) -> Trajectory:
    """Run one trial; identical to replication 0 of ``run_replications``."""
    return _trajectory(config, _simulate(config, [0]), 0)


def martingale_residual(traj: Trajectory) -> float:
    """``n^-1 M_n`` at the last recorded step (largest arm in absolute value)."""
    if traj.martingale is None or len(traj.martingale) == 0:
        raise MissingDiagnosticError("trajectory has no martingale path")
    last = np.atleast_1d(traj.martingale[-1])
    k = int(np.argmax(np.abs(last)))
    return float(last[k] / traj.steps[-1])


# -- replications ------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationSummary:
    """Terminal state of ``R`` replications.

    ``final_pi`` is ``(R, K)``; stratified runs add ``final_cells``
    ``(R, J+1, L+1)`` and ``marginal_imbalances`` ``(R, J+1 + L+1)``
    holding ``n^-1 D`` for every level of T then W.
    """

    R: int
    horizon: int
    seed: int
    final_pi: np.ndarray
    martingale_residuals: np.ndarray
    final_imbalance: Optional[np.ndarray] = None
    final_cells: Optional[np.ndarray] = None
    marginal_imbalances: Optional[np.ndarray] = None
    first_trajectory: Optional[Trajectory] = None

    def abs_errors(self, limit) -> np.ndarray:
        """``|pi_N - t|`` per replication and arm."""
        t = np.asarray(limit, dtype=float)
        if t.ndim == 0:
            t = np.array([t, 1.0 - t]) if self.final_pi.shape[1] == 2 else t
        if t.shape != self.final_pi.shape[1:]:
            raise ShapeError(f"limit shape {t.shape} does not match {self.final_pi.shape[1:]}")
        return np.abs(self.final_pi - t)

    def mean_abs_error(self, limit) -> float:
        return float(self.abs_errors(limit)[:, 0].mean())

    def fraction_within(self, limit, eps: float) -> float:
        return float((self.abs_errors(limit)[:, 0] <= eps).mean())


def default_threads() -> int:
    env = os.environ.get("ALLOCSIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"ALLOCSIM_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def _run_chunk(config: TrialConfig, reps: list) -> _Batch:
    try:
        return _simulate(config, reps)
    except Exception as exc:
        for r in reps:
            try:
                _simulate(config, [r])
            except Exception as inner:
                raise ReplicationError(f"replication {r} failed: {inner}", replication=r) from inner
        raise ReplicationError(f"replications {reps[0]}..{reps[-1]} failed: {exc}", replication=reps[0]) from exc


def run_replications(
    config: TrialConfig,
    R: int,
    base_seed: Optional[int] = None,
    *,
    threads: Optional[int] = None,
) -> ReplicationSummary:
    """Run ``R`` independent trials and collect their terminal states.

    ``base_seed`` defaults to ``config.seed``; replication ``r`` uses the
    stream derived from ``(base_seed, r)``.
    """
    if R < 1:
        raise ConfigurationError("R must be at least 1")
    if base_seed is not None and base_seed != config.seed:
        config = _replace_seed(config, base_seed)
    workers = max(1, min(threads or default_threads(), R))
    chunks = [list(c) for c in np.array_split(np.arange(R), workers) if len(c)]
    if workers == 1:
        batches = [_run_chunk(config, chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(lambda c: _run_chunk(config, c), chunks))

    final_pi = np.concatenate([b.pi[:, -1] for b in batches])
    mart = np.concatenate([b.martingale[:, -1] for b in batches]) / config.horizon
    worst = np.argmax(np.abs(mart), axis=1)
    residuals = mart[np.arange(R), worst]
    counts = np.concatenate([b.counts for b in batches])
    imbalance = 2 * counts[:, 0] - config.horizon if config.K == 2 else None
    cells = marginal = None
    if config.kind == CA:
        cells = np.concatenate([b.cells[:, -1] for b in batches])
        Ns = np.concatenate([b.strata_N for b in batches])
        NAs = np.concatenate([b.strata_NA for b in batches])
        D = 2 * NAs - Ns
        marginal = np.concatenate([D.sum(axis=2), D.sum(axis=1)], axis=1) / config.horizon
    return ReplicationSummary(
        R=R,
        horizon=config.horizon,
        seed=config.seed,
        final_pi=final_pi,
        martingale_residuals=residuals,
        final_imbalance=imbalance,
        final_cells=cells,
        marginal_imbalances=marginal,
        first_trajectory=_trajectory(config, batches[0], 0),
    )


def _replace_seed(config: TrialConfig, seed: int) -> TrialConfig:
    from dataclasses import replace

    return replace(config, seed=seed)


# -- limits and reports ------------------------------------------------------------


@dataclass(frozen=True)
class LimitInfo:
    """Theoretical limit of the allocation proportions for a configuration."""

    pi: np.ndarray
    cells: Optional[np.ndarray] = None
    residual: float = 0.0
    kind: str = "fixed-point"
    se: float = 0.0


def theoretical_limit(config: TrialConfig, *, mc_samples: int = 200_000) -> LimitInfo:
    design, kind = config.design, config.kind
    if kind == AA:
        from .designs_aa import aa_limit_result

        res = aa_limit_result(design)
        return LimitInfo(aa_limit(design), residual=float(res.residual), kind=res.kind)
    if kind == RA:
        t = ra_limit(design, config.response_model.params)
        return LimitInfo(np.array([t, 1.0 - t]))
    if kind == CARA:
        lim = cara_limit(design, config.response_model, config.covariate_model, mc_samples=mc_samples)
        return LimitInfo(np.array([lim.value, 1.0 - lim.value]), se=lim.se)
    lim = strata_limit(design, config.covariate_model.matrix)
    return LimitInfo(np.array([lim.overall, 1.0 - lim.overall]), cells=lim.cells, residual=lim.residual)


def _limit_parts(limit, K):
    if isinstance(limit, LimitInfo):
        return limit.pi, limit.cells
    if isinstance(limit, StrataLimit):
        return np.array([limit.overall, 1.0 - limit.overall]), limit.cells
    t = np.asarray(limit, dtype=float)
    if t.ndim == 0 and K == 2:
        return np.array([float(t), 1.0 - float(t)]), None
    if t.ndim == 2:
        return None, t
    return t, None


def convergence_report(summary: ReplicationSummary, theoretical_limit, eps: float) -> dict:
    """Terminal-error statistics: an empirical stand-in for almost-sure convergence.

    Returns plain data (lists and floats) ready for JSON.
    """
    K = summary.final_pi.shape[1]
    pi_lim, cell_lim = _limit_parts(theoretical_limit, K)
    report = {"eps": float(eps), "R": summary.R, "horizon": summary.horizon}
    if pi_lim is not None:
        if pi_lim.shape != (K,):
            raise ShapeError(f"limit has shape {pi_lim.shape}, summary has {K} arms")
        err = np.abs(summary.final_pi - pi_lim)
        report.update(
            limit=pi_lim.tolist(),
            mean_abs_error=float(err[:, 0].mean()),
            max_abs_error=float(err[:, 0].max()),
            fraction_within=float((err[:, 0] <= eps).mean()),
            per_arm_mean_abs_error=err.mean(axis=0).tolist(),
            per_arm_fraction_within=(err <= eps).mean(axis=0).tolist(),
        )
    if cell_lim is not None:
        if summary.final_cells is None:
            raise ShapeError("per-stratum limit given for an unstratified summary")
        if cell_lim.shape != summary.final_cells.shape[1:]:
            raise ShapeError(
                f"limit table {cell_lim.shape} does not match strata {summary.final_cells.shape[1:]}"
            )
        err = np.abs(summary.final_cells - cell_lim)
        report["per_stratum"] = {
            "limit": cell_lim.tolist(),
            "mean_abs_error": np.nanmean(err, axis=0).tolist(),
            "max_abs_error": np.nanmax(err, axis=0).tolist(),
            "fraction_within": np.mean(err <= eps, axis=0).tolist(),
        }
        report["max_abs_marginal_imbalance"] = float(np.max(np.abs(summary.marginal_imbalances)))
    report["martingale_max_abs_residual"] = float(np.max(np.abs(summary.martingale_residuals)))
    return report


# -- export ------------------------------------------------------------------------


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def trajectory_csv(traj: Trajectory) -> str:
    """Long-format CSV: one row per recorded step and arm (or stratum)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    est_cols = [f"estimate_{name}" for name in traj.estimate_names]
    writer.writerow(["step", "arm_or_stratum", "pi", *est_cols, "martingale", "schema_version"])
    for t, step in enumerate(traj.steps):
        est = [] if traj.estimates is None else [_fmt(v) for v in traj.estimates[t]]
        if traj.cells is None:
            for k in range(traj.pi.shape[1]):
                writer.writerow([int(step), str(k), _fmt(traj.pi[t, k]), *est,
                                 _fmt(traj.martingale[t, k]), SCHEMA_VERSION])
        else:
            writer.writerow([int(step), "overall", _fmt(traj.pi[t, 0]), *est,
                             _fmt(traj.martingale[t, 0]), SCHEMA_VERSION])
            J1, L1 = traj.cells.shape[1:]
            for j in range(J1):
                for l in range(L1):
                    writer.writerow([int(step), f"{j}:{l}", _fmt(traj.cells[t, j, l]), *est,
                                     "", SCHEMA_VERSION])
    return buf.getvalue()


def trajectory_dict(traj: Trajectory) -> dict:
    def clean(a):
        return None if a is None else np.where(np.isnan(a), None, a).tolist()

    return {
        "steps": traj.steps.tolist(),
        "pi": traj.pi.tolist(),
        "martingale": traj.martingale.tolist(),
        "estimate_names": list(traj.estimate_names),
        "estimates": clean(traj.estimates),
        "cells": clean(traj.cells),
    }


def summary_dict(summary: ReplicationSummary, report: Optional[dict] = None, spec=None) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "R": summary.R,
        "horizon": summary.horizon,
        "seed": summary.seed,
        "final_pi": summary.final_pi.tolist(),
        "martingale_residuals": summary.martingale_residuals.tolist(),
    }
    if summary.final_imbalance is not None:
        out["final_imbalance"] = summary.final_imbalance.tolist()
    if summary.final_cells is not None:
        out["final_cells"] = np.where(np.isnan(summary.final_cells), None, summary.final_cells).tolist()
        out["marginal_imbalances"] = summary.marginal_imbalances.tolist()
    if report is not None:
        out["report"] = report
    if spec is not None:
        out["spec"] = spec
    return out


def summary_json(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
