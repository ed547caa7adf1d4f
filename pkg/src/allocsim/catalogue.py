"""Design catalogue and declarative experiment specs.

A spec is a TOML (or JSON) document with ``[design]``, ``[model]``,
``[covariates]`` and ``[run]`` tables.  Command-line overrides are applied
on top of the file as ``section.key=value`` pairs, values parsed as TOML.
"""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import dataclass
from typing import Callable, Optional

from . import designs_aa as aa
from . import designs_cara as cara
from . import designs_ra as ra
from . import designs_strata as st
from .errors import ConfigurationError
from .models import (
    BinaryModel,
    CategoricalCovariate,
    LinearInteractionModel,
    StandardNormalCovariate,
    constant_target,
    neyman_target,
    normal_cdf_target,
)
from .sim import TrialConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SECTIONS = ("design", "model", "covariates", "run")
RUN_DEFAULTS = {
    "horizon": 1000,
    "reps": 100,
    "seed": 0,
    "eps": 0.05,
    "stride": 10,
    "format": "csv",
    "out": "allocsim-out",
}


def _target(value, covariate: bool = False):
    if value is None:
        return constant_target(0.5) if covariate else neyman_target()
    if isinstance(value, bool):
        raise ConfigurationError("[design] target: expected 'neyman', 'normal_cdf' or a number")
    if isinstance(value, (int, float)):
        return constant_target(float(value))
    if value == "neyman":
        return neyman_target()
    if isinstance(value, str) and value.startswith("normal_cdf"):
        _, _, scale = value.partition(":")
        return normal_cdf_target(float(scale) if scale else 1.0)
    raise ConfigurationError(f"[design] target: unknown target {value!r}")


WEI_FUNCTIONS = {"linear": aa.linear_wei, "cubic": aa.cubic_wei}


def _abcd_function(params):
    name = params.get("F", "logistic")
    if name == "logistic":
        return aa.logistic
    if name == "power":
        return aa.power_family(float(params.get("a", 1.0)))
    raise ConfigurationError(f"[design] F: unknown ABCD function {name!r}")


def _wei_function(params):
    name = params.get("f", "linear")
    try:
        return WEI_FUNCTIONS[name]
    except KeyError:
        raise ConfigurationError(f"[design] f: unknown Wei function {name!r}") from None


@dataclass(frozen=True)
class DesignEntry:
    kind: str
    design_class: str
    params: tuple
    family: str
    build: Callable


def _entry(kind, cls, params, family, build):
    return DesignEntry(kind, cls, tuple(params), family, build)


CATALOGUE = {
    e.kind: e
    for e in [
        _entry("CR", "AA", ["K=2"], "complete randomization",
               lambda p: aa.CompleteRandomization(int(p.get("K", 2)))),
        _entry("Efron", "AA", ["p=2/3"], "biased coin",
               lambda p: aa.EfronBCD(float(p.get("p", 2 / 3)))),
        _entry("EfronExtended", "AA", ["target=0.5", "p1=1/3", "p2=2/3"], "biased coin, general target",
               lambda p: aa.ExtendedEfron(float(p.get("target", 0.5)), float(p.get("p1", 1 / 3)),
                                          float(p.get("p2", 2 / 3)))),
        _entry("WeiAdaptive", "AA", ["f=linear|cubic"], "adaptive biased coin",
               lambda p: aa.WeiAdaptive(_wei_function(p))),
        _entry("ABCD", "AA", ["F=logistic|power", "a=1"], "adjustable biased coin",
               lambda p: aa.ABCD(_abcd_function(p))),
        _entry("AaStar", "AA", [], "deterministic below balance",
               lambda p: aa.AaStar()),
        _entry("WeiMulti1", "AA", ["K=3"], "K-arm adaptive coin (inverse proportions)",
               lambda p: aa.WeiMulti1(int(p.get("K", 3)))),
        _entry("WeiMulti2", "AA", ["K=3"], "K-arm adaptive coin (complements)",
               lambda p: aa.WeiMulti2(int(p.get("K", 3)))),
        _entry("Tabulated", "AA", ["points=[[x, phi], ...]"], "user-supplied piecewise-linear rule",
               lambda p: aa.Tabulated(tuple(map(tuple, p.get("points", ((0.0, 1.0), (1.0, 0.0))))))),
        _entry("DAWD", "RA", ["rho=0.5"], "weighted differences, doubly adaptive",
               lambda p: ra.DAWD(float(p.get("rho", 0.5)))),
        _entry("DBCD", "RA", ["nu=2", "target=neyman"], "doubly-adaptive biased coin",
               lambda p: ra.DBCD(float(p.get("nu", 2.0)), _target(p.get("target")))),
        _entry("ERADE", "RA", ["alpha=0.5", "target=neyman"], "efficient randomized adaptive design",
               lambda p: ra.ERADE(float(p.get("alpha", 0.5)), _target(p.get("target")))),
        _entry("PowerRule", "RA", ["tau=2", "target=neyman"], "power-of-target coin",
               lambda p: ra.PowerRule(float(p.get("tau", 2.0)), _target(p.get("target")))),
        _entry("SML", "RA", ["target=neyman"], "sequential maximum likelihood",
               lambda p: ra.SML(_target(p.get("target")))),
        _entry("ETH", "CARA", [], "larger estimated mean response wins",
               lambda p: cara.ETH()),
        _entry("ZhangTarget", "CARA", ["target=0.5|normal_cdf"], "covariate-specific target, plug-in",
               lambda p: cara.ZhangTarget(_target(p.get("target"), covariate=True))),
        _entry("ZhangHu", "CARA", ["nu=2", "target=0.5|normal_cdf"], "covariate-adjusted doubly-adaptive coin",
               lambda p: cara.ZhangHu(float(p.get("nu", 2.0)), _target(p.get("target"), covariate=True))),
        _entry("PocockSimon", "CA", ["p=0.8"], "minimisation on marginal imbalance",
               lambda p: st.PocockSimon(float(p.get("p", 0.8)))),
        _entry("HuHu", "CA", ["p=0.8", "weights=[wg, wT, wW, ws]"], "weighted overall/marginal/stratum imbalance",
               lambda p: st.HuHu(float(p.get("p", 0.8)),
                                 st.ImbalanceWeights(*p.get("weights", (0.05, 0.1, 0.1, 0.75))))),
        _entry("CAbcd", "CA", ["probs=[[...], ...] (optional)"],
               "covariate-adaptive biased coin per stratum",
               lambda p: st.CAbcd(probs=_matrix(p["probs"]) if "probs" in p else None)),
        _entry("Atkinson", "CA", [], "D-optimal coin, stratified form",
               lambda p: st.Atkinson()),
        _entry("AtkinsonGeneral", "CA", ["interactions=true"], "D-optimal coin, linear-model form",
               lambda p: st.AtkinsonGeneral(bool(p.get("interactions", True)))),
        _entry("RDBCD", "CARA", ["targets=[[...], ...]"], "stratified doubly-adaptive coin",
               lambda p: st.RDBCD(_matrix(p.get("targets", ((0.5, 0.5), (0.5, 0.5)))))),
    ]
}

KNOWN_PARAMS = {
    "CR": {"K"}, "Efron": {"p"}, "EfronExtended": {"target", "p1", "p2"}, "WeiAdaptive": {"f"},
    "ABCD": {"F", "a"}, "AaStar": set(), "WeiMulti1": {"K"}, "WeiMulti2": {"K"},
    "Tabulated": {"points"}, "DAWD": {"rho"}, "DBCD": {"nu", "target"},
    "ERADE": {"alpha", "target"}, "PowerRule": {"tau", "target"}, "SML": {"target"},
    "ETH": set(), "ZhangTarget": {"target"}, "ZhangHu": {"nu", "target"},
    "PocockSimon": {"p"}, "HuHu": {"p", "weights"}, "CAbcd": {"probs"}, "Atkinson": set(),
    "AtkinsonGeneral": {"interactions"}, "RDBCD": {"targets"},
}


def _matrix(rows):
    return tuple(tuple(float(v) for v in r) for r in rows)


def build_design(section: dict):
    if "kind" not in section:
        raise ConfigurationError("[design] kind: missing")
    kind = section["kind"]
    entry = CATALOGUE.get(kind)
    if entry is None:
        raise ConfigurationError(f"[design] kind: unknown design {kind!r}")
    params = {k: v for k, v in section.items() if k != "kind"}
    unknown = set(params) - KNOWN_PARAMS[kind]
    if unknown:
        raise ConfigurationError(f"[design] {sorted(unknown)[0]}: not a parameter of {kind}")
    try:
        return entry.build(params)
    except ConfigurationError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"[design] {kind}: {exc}") from exc


def build_model(section: Optional[dict]):
    if not section:
        return None
    kind = section.get("kind", "binary")
    try:
        if kind == "binary":
            return BinaryModel(float(section["pA"]), float(section["pB"]))
        if kind == "linear":
            return LinearInteractionModel(
                float(section["muA"]), float(section["muB"]), float(section["betaA"]),
                float(section["betaB"]), float(section.get("noise_sd", 1.0)),
            )
    except KeyError as exc:
        raise ConfigurationError(f"[model] {exc.args[0]}: missing") from None
    except ValueError as exc:
        raise ConfigurationError(f"[model] {exc}") from exc
    raise ConfigurationError(f"[model] kind: unknown model {kind!r}")


def build_covariates(section: Optional[dict]):
    if not section:
        return None
    kind = section.get("kind", "normal")
    if kind == "normal":
        return StandardNormalCovariate()
    if kind == "categorical":
        try:
            if "probs" in section:
                return CategoricalCovariate(_matrix(section["probs"]))
            return CategoricalCovariate.uniform(int(section.get("J", 1)), int(section.get("L", 1)))
        except ValueError as exc:
            raise ConfigurationError(f"[covariates] probs: {exc}") from exc
    raise ConfigurationError(f"[covariates] kind: unknown covariate model {kind!r}")


def parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


@dataclass(frozen=True)
class ExperimentSpec:
    """Resolved experiment description (file values plus overrides)."""

    data: dict

    @classmethod
    def from_file(cls, path: str) -> "ExperimentSpec":
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read spec {path!r}: {exc.strerror}") from exc
        try:
            if path.endswith(".json"):
                data = json.loads(raw.decode())
            else:
                data = tomllib.loads(raw.decode())
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot parse spec {path!r}: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(f"[{sorted(unknown)[0]}]: unknown section")
        if "design" not in data:
            raise ConfigurationError("[design]: section missing")
        resolved = {s: dict(data.get(s) or {}) for s in SECTIONS}
        for key, value in RUN_DEFAULTS.items():
            resolved["run"].setdefault(key, value)
        return cls(resolved)

    def with_overrides(self, overrides: dict) -> "ExperimentSpec":
        """Apply ``{"section.key": value}`` overrides; later wins."""
        data = copy.deepcopy(self.data)
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if section not in SECTIONS or not key:
                raise ConfigurationError(f"override {dotted!r}: expected section.key")
            data[section][key] = value
        return ExperimentSpec(data)

    @property
    def run(self) -> dict:
        return self.data["run"]

    def design(self):
        return build_design(self.data["design"])

    def trial_config(self) -> TrialConfig:
        design = self.design()
        model = build_model(self.data["model"])
        covariates = build_covariates(self.data["covariates"])
        run = self.run
        kind = CATALOGUE[self.data["design"]["kind"]].design_class
        if kind in ("RA",) and model is None:
            raise ConfigurationError("[model]: section missing (response-adaptive design needs responses)")
        if kind == "CARA" and isinstance(design, cara.CaraRule):
            if model is None:
                raise ConfigurationError("[model]: section missing (CARA design needs responses)")
            if covariates is None:
                raise ConfigurationError("[covariates]: section missing (CARA design needs covariates)")
        if isinstance(design, st.StrataRule) and covariates is None:
            raise ConfigurationError("[covariates]: section missing (stratified design needs strata)")
        m = run.get("m", 0 if kind in ("AA", "CA") or isinstance(design, st.StrataRule) else 5)
        try:
            return TrialConfig(
                design=design,
                horizon=int(run["horizon"]),
                m=int(m),
                response_model=model,
                covariate_model=covariates,
                seed=int(run["seed"]),
                record_stride=int(run["stride"]),
            )
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"[run] {exc}") from exc
