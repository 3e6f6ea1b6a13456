"""Experiment specification files.

An INI file with one ``[experiment]`` section and optional
``[strategy:<name>]`` sections overriding ``gamma``, ``gamma_reset``,
``batch_size`` or ``replacement`` for a single strategy. See README for
the list of keys. ``SPIDEREM_OUT`` and ``SPIDEREM_WORKERS`` override the
output directory and worker count.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .solvers import BASELINES, SPIDER_STRATEGIES

KNOWN_STRATEGIES = SPIDER_STRATEGIES + BASELINES
OVERRIDABLE = ("gamma", "gamma_reset", "batch_size", "replacement")


class SpecError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid experiment spec:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class ExperimentSpec:
    source: str = "synth"
    csv_path: str = ""
    has_header: bool = False
    synth_n: int = 5000
    synth_g: int = 5
    synth_d: int = 10
    synth_separation: float = 3.0
    data_seed: int = 0
    g: int = 5
    cov_floor: float = 1e-8
    strategies: tuple[str, ...] = KNOWN_STRATEGIES[:7]
    replications: int = 5
    k_out: int = 30
    batch_size: int | None = None
    gamma: float = 0.01
    gamma_reset: float = 0.0
    warmstart_epochs: int = 2
    seed: int = 1
    init_seed: int = 0
    replacement: bool = True
    workers: int = 1
    output_dir: str = "out"
    overrides: dict[str, dict[str, object]] = field(default_factory=dict)

    def batch_for(self, n: int, strategy: str) -> int:
        b = self.overrides.get(strategy, {}).get("batch_size", self.batch_size)
        return int(b) if b is not None else math.ceil(math.sqrt(n))

    def option(self, strategy: str, key: str):
        return self.overrides.get(strategy, {}).get(key, getattr(self, key))


_INT = ("synth_n", "synth_g", "synth_d", "data_seed", "g", "replications", "k_out", "warmstart_epochs",
        "seed", "init_seed", "workers")
_FLOAT = ("synth_separation", "cov_floor", "gamma", "gamma_reset")
_BOOL = ("has_header", "replacement")


def _convert(key: str, raw: str, problems: list[str], where: str):
    raw = raw.strip()
    try:
        if key in _INT:
            return int(raw)
        if key in _FLOAT:
            return float(raw)
        if key in _BOOL:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if key == "batch_size":
            return None if raw.lower() in ("", "auto") else int(raw)
        if key == "strategies":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
    except ValueError:
        problems.append(f"{where}: {key} has invalid value {raw!r}")
        return None
    return raw


def parse_spec(text: str, base_dir: Path | None = None) -> ExperimentSpec:
    """Parse and validate; every violated field is reported in one :class:`SpecError`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    problems: list[str] = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError([f"unreadable spec: {exc}"]) from None
    if not cp.has_section("experiment"):
        raise SpecError(["missing [experiment] section"])
    known = {f for f in ExperimentSpec.__dataclass_fields__ if f != "overrides"}
    values: dict[str, object] = {}
    for key, raw in cp.items("experiment"):
        if key not in known:
            problems.append(f"[experiment]: unknown key {key!r}")
            continue
        val = _convert(key, raw, problems, "[experiment]")
        if val is not None or key == "batch_size":
            values[key] = val
    overrides: dict[str, dict[str, object]] = {}
    for section in cp.sections():
        if section == "experiment":
            continue
        if not section.startswith("strategy:"):
            problems.append(f"unknown section [{section}]")
            continue
        name = section.split(":", 1)[1].strip()
        if name not in KNOWN_STRATEGIES:
            problems.append(f"[{section}]: unknown strategy {name!r}")
        ov = {}
        for key, raw in cp.items(section):
            if key not in OVERRIDABLE:
                problems.append(f"[{section}]: key {key!r} cannot be overridden")
                continue
            ov[key] = _convert(key, raw, problems, f"[{section}]")
        overrides[name] = ov
    if os.environ.get("SPIDEREM_OUT"):
        values["output_dir"] = os.environ["SPIDEREM_OUT"]
    if os.environ.get("SPIDEREM_WORKERS"):
        try:
            values["workers"] = int(os.environ["SPIDEREM_WORKERS"])
        except ValueError:
            problems.append("SPIDEREM_WORKERS must be an integer")
    spec = ExperimentSpec(**values, overrides=overrides)
    if spec.source == "csv" and spec.csv_path and base_dir is not None and not Path(spec.csv_path).is_absolute():
        spec = replace(spec, csv_path=str(base_dir / spec.csv_path))
    problems.extend(validate(spec))
    if problems:
        raise SpecError(problems)
    return spec


def validate(spec: ExperimentSpec) -> list[str]:
    p = []
    if spec.source not in ("synth", "csv"):
        p.append(f"source must be 'synth' or 'csv' (got {spec.source!r})")
    if spec.source == "csv":
        if not spec.csv_path:
            p.append("csv_path is required when source = csv")
        elif not Path(spec.csv_path).is_file():
            p.append(f"csv_path {spec.csv_path!r} does not exist")
    if spec.source == "synth":
        for key in ("synth_n", "synth_g", "synth_d"):
            if getattr(spec, key) < 1:
                p.append(f"{key} must be >= 1")
        if not spec.synth_separation > 0:
            p.append("synth_separation must be > 0")
    if spec.g < 1:
        p.append("g must be >= 1")
    if not spec.cov_floor > 0:
        p.append("cov_floor must be > 0")
    if not spec.strategies:
        p.append("at least one strategy is required")
    for s in spec.strategies:
        if s not in KNOWN_STRATEGIES:
            p.append(f"unknown strategy {s!r}")
    if len(set(spec.strategies)) != len(spec.strategies):
        p.append("strategies must be distinct")
    if spec.replications < 1:
        p.append("replications must be >= 1")
    if spec.k_out < 1:
        p.append("k_out must be >= 1")
    if spec.warmstart_epochs < 0:
        p.append("warmstart_epochs must be >= 0")
    if spec.workers < 1:
        p.append("workers must be >= 1")
    for where, opts in [("[experiment]", {k: getattr(spec, k) for k in OVERRIDABLE})] + \
            [(f"[strategy:{k}]", v) for k, v in spec.overrides.items()]:
        if "gamma" in opts and opts["gamma"] is not None and not opts["gamma"] > 0:
            p.append(f"{where}: gamma must be > 0")
        if "gamma_reset" in opts and opts["gamma_reset"] is not None and opts["gamma_reset"] < 0:
            p.append(f"{where}: gamma_reset must be >= 0")
        if opts.get("batch_size") is not None and opts["batch_size"] < 1:
            p.append(f"{where}: batch_size must be >= 1")
    return p


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise SpecError([f"spec file {str(path)!r} does not exist"])
    return parse_spec(path.read_text(), path.parent)
