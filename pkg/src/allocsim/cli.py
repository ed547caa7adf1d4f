"""Command-line entry point: ``allocsim {simulate,limit,verify,list-designs}``.

Override precedence, lowest to highest: spec file, ``--set section.key=value``
flags in order, then the dedicated flags (``--seed``, ``--reps``,
``--horizon``, ``--out``, ``--format``).  ``--threads`` falls back to
``ALLOCSIM_THREADS`` and then to the number of CPUs.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import sim
from .catalogue import CATALOGUE, ExperimentSpec, build_covariates, build_model, parse_value
from .designs_aa import AaRule, aa_limit_result
from .designs_cara import CaraRule, cara_limit
from .designs_ra import RaRule, ra_limit_result
from .designs_strata import StrataRule, strata_limit
from .errors import AllocationError, ConfigurationError
from .models import StandardNormalCovariate
from .properties import verify_design

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set {item!r}: expected section.key=value")
        out[key.strip()] = parse_value(value.strip())
    for flag, key in (("seed", "run.seed"), ("reps", "run.reps"), ("horizon", "run.horizon"),
                      ("out", "run.out"), ("format", "run.format")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def _load(args) -> ExperimentSpec:
    return ExperimentSpec.from_file(args.spec).with_overrides(_overrides(args))


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    return sim.default_threads()


def cmd_simulate(args) -> int:
    spec = _load(args)
    config = spec.trial_config()
    run = spec.run
    reps, eps, fmt, out_dir = int(run["reps"]), float(run["eps"]), run["format"], run["out"]
    if fmt not in ("csv", "json"):
        raise ConfigurationError(f"[run] format: expected csv or json, got {fmt!r}")

    summary = sim.run_replications(config, reps, threads=_threads(args))
    try:
        limit = sim.theoretical_limit(config)
    except AllocationError as exc:
        print(f"warning: no theoretical limit ({exc})", file=sys.stderr)
        limit = None
    report = sim.convergence_report(summary, limit, eps) if limit is not None else None
    payload = sim.summary_dict(summary, report, spec.data)

    written = []
    try:
        if fmt == "csv":
            path = os.path.join(out_dir, "trajectory.csv")
            sim.atomic_write_text(path, sim.trajectory_csv(summary.first_trajectory))
            written.append(path)
        else:
            payload["trajectory"] = sim.trajectory_dict(summary.first_trajectory)
        path = os.path.join(out_dir, "summary.json")
        sim.atomic_write_text(path, sim.summary_json(payload))
        written.append(path)
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        raise

    if report is None:
        print(f"R={reps} N={config.horizon}: no limit available")
    else:
        lim = report.get("limit", [float("nan")])[0]
        line = (
            f"limit {lim:.6f}  mean |pi_N - t| {report.get('mean_abs_error', float('nan')):.6f}  "
            f"within {eps:g}: {100 * report.get('fraction_within', float('nan')):.1f}%"
        )
        if "per_stratum" in report:
            worst = float(np.max(report["per_stratum"]["mean_abs_error"]))
            line += f"  worst stratum mean error {worst:.6f}"
        print(f"{line}  (R={reps}, N={config.horizon})")
    return EXIT_OK


def cmd_limit(args) -> int:
    spec = _load(args)
    design = spec.design()
    model = build_model(spec.data["model"])
    covariates = build_covariates(spec.data["covariates"])
    if isinstance(design, AaRule):
        res = aa_limit_result(design)
        t = np.atleast_1d(res.t)
        values = t if design.K > 2 else np.array([t[0], 1 - t[0]])
        print("limit " + " ".join(f"{v:.6f}" for v in values))
        print(f"residual {res.residual:.3g}  kind {res.kind}  iterations {res.iterations}")
    elif isinstance(design, RaRule):
        if model is None:
            raise ConfigurationError("[model]: section missing (limit depends on the true parameters)")
        res = ra_limit_result(design, model.params)
        if design.uses_target:
            print(f"limit {design.target(model.params):.6f}")
        else:
            print(f"limit {res.t:.6f}")
        print(f"residual {res.residual:.3g}  kind {res.kind}  iterations {res.iterations}")
    elif isinstance(design, CaraRule):
        if model is None:
            raise ConfigurationError("[model]: section missing (limit depends on the true parameters)")
        covariates = covariates or StandardNormalCovariate()
        closed = cara_limit(design, model, covariates, "closed-form")
        solved = cara_limit(design, model, covariates, "solver")
        print(f"limit {closed.value:.6f}")
        print(f"solver {solved.value:.6f}  mc se {solved.se:.2g}  kind {solved.solver.kind}")
    elif isinstance(design, StrataRule):
        if covariates is None:
            raise ConfigurationError("[covariates]: section missing (limit depends on the strata)")
        lim = strata_limit(design, covariates.matrix)
        print(f"limit {lim.overall:.6f}")
        for j, row in enumerate(lim.cells):
            print(f"  T={j}: " + " ".join(f"{v:.6f}" for v in row))
        print(f"residual {lim.residual:.3g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _load(args)
    design = spec.design()
    results = verify_design(
        design,
        model=build_model(spec.data["model"]),
        covariates=build_covariates(spec.data["covariates"]),
        cases=args.cases,
    )
    for res in results:
        print(res.line())
        for w in res.witnesses:
            print(f"      witness {w}")
    failed = sum(not r.ok for r in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_list_designs(args) -> int:
    print(f"{'kind':<16}{'class':<7}{'parameters':<44}family")
    for entry in CATALOGUE.values():
        params = ", ".join(entry.params) or "-"
        print(f"{entry.kind:<16}{entry.design_class:<7}{params:<44}{entry.family}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="allocsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_spec(p):
        p.add_argument("spec", help="experiment spec (.toml or .json)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a spec value; may be repeated")
        return p

    p = with_spec(sub.add_parser("simulate", help="run replicated trials and write outputs"))
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--format", choices=("csv", "json"))
    p.set_defaults(func=cmd_simulate)

    p = with_spec(sub.add_parser("limit", help="print the theoretical limiting proportion"))
    p.set_defaults(func=cmd_limit)

    p = with_spec(sub.add_parser("verify", help="check the rule's structural properties"))
    p.add_argument("--cases", type=int, default=100_000, help="random inputs for fuzzing")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("list-designs", help="print the design catalogue")
    p.set_defaults(func=cmd_list_designs)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AllocationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
