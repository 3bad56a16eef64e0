"""Experiment configs, parameter sweeps and report tables.

A config is a single YAML document::

    schema: 1
    scenario: {...}        # mobility, workload and protocol settings
    sweep: {axis: ttl, values: [2, 4, 8]}
    protocols: [local_mpar, tabu_mpar]
    seeds: 5
    master_seed: 0
    output: {dir: out, logs: true}

Run seeds follow ``SeedSequence([master_seed, seed_index])``: a seed index
gets the same value at every sweep point and for every protocol, so adding
points or protocols never changes existing runs.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .core import DEFAULT_DELTA
from .fixtures import load_fixture
from .optimizer import TabuParams
from .protocols import PROTOCOLS
from .sim import DEPOSIT_POLICIES, KNOWLEDGE_MODES, InvariantFault, MetricsReport, Scenario, Workload, \
    fixture_scenario, run, synthetic_scenario, write_log

SCHEMA_VERSION = 1
AXES = ("ttl", "buffer", "nodes")
METRICS = ("delivery_ratio", "avg_latency_s", "overhead_ratio", "avg_hops")
CSV_COLUMNS = ("protocol", "axis", "value", "seed_count") + tuple(
    col for m in METRICS for col in (m, m + "_std"))


class ConfigError(ValueError):
    """Config document violates the schema; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


SCENARIO_DEFAULTS = {
    "fixture": None,
    "nodes": 12,
    "locations": 5,
    "slots": 4,
    "period": 24.0,
    "communities": 3,
    "home_rate": 0.3,
    "roam_rate": 0.03,
    "duration": None,
    "dwell_mean": 0.5,
    "delta": DEFAULT_DELTA,
    "knowledge": "oracle",
    "warmup_periods": 4,
    "deposit": "dest",
    "direct_delivery": True,
    "buffer": None,
    "copies": 8,
    "tabu": None,
    "workload": None,
}
WORKLOAD_DEFAULTS = {"count": 20, "ttl": 8.0, "size_min": 1, "size_max": 1, "start": 0.0, "end": None,
                     "messages": None}
TABU_DEFAULTS = {"theta": None, "sigma": None, "fixed_length": None}
OUTPUT_DEFAULTS = {"dir": "out", "csv": "report.csv", "json": "report.json", "logs": True}
TOP_KEYS = {"schema", "scenario", "sweep", "protocols", "seeds", "master_seed", "output", "jobs"}


def _merge(defaults: dict, given, path: str) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(path, "expected a mapping")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    out = dict(defaults)
    out.update(given)
    return out


@dataclass
class ExperimentSpec:
    scenario: dict
    axis: str
    values: list
    protocols: list
    seeds: int
    master_seed: int = 0
    output: dict = field(default_factory=lambda: dict(OUTPUT_DEFAULTS))
    jobs: int = 1
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def out_dir(self) -> Path:
        d = Path(self.output["dir"])
        return d if d.is_absolute() else self.base_dir / d

    def run_seed(self, index: int) -> int:
        return int(np.random.SeedSequence([self.master_seed, index]).generate_state(1)[0])

    def scenario_for(self, protocol: str, value, index: int, strict: bool = True) -> Scenario:
        return build_scenario(self.scenario, protocol, self.axis, value, self.run_seed(index),
                              self.base_dir, strict)


def _validate_scenario(sc: dict, path: str = "scenario"):
    if not 0.0 < float(sc["delta"]) < 1.0:
        raise ConfigError(f"{path}.delta", "delta must lie in (0,1)")
    if sc["knowledge"] not in KNOWLEDGE_MODES:
        raise ConfigError(f"{path}.knowledge", f"must be one of {list(KNOWLEDGE_MODES)}")
    if sc["deposit"] not in DEPOSIT_POLICIES:
        raise ConfigError(f"{path}.deposit", f"must be one of {list(DEPOSIT_POLICIES)}")
    for key in ("nodes", "locations", "slots"):
        if sc["fixture"] is None and (not isinstance(sc[key], int) or sc[key] < 1):
            raise ConfigError(f"{path}.{key}", "must be a positive integer")
    if not float(sc["dwell_mean"]) > 0:
        raise ConfigError(f"{path}.dwell_mean", "must be positive")
    if not float(sc["workload"]["ttl"]) > 0:
        raise ConfigError(f"{path}.workload.ttl", "must be positive")


def parse_config(path) -> ExperimentSpec:
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return spec_from_dict(doc, path.parent)


def spec_from_dict(doc, base_dir=None) -> ExperimentSpec:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = sorted(set(doc) - TOP_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError("schema", f"expected schema {SCHEMA_VERSION}, got {doc.get('schema')!r}")
    sc = _merge(SCENARIO_DEFAULTS, doc.get("scenario"), "scenario")
    sc["workload"] = _merge(WORKLOAD_DEFAULTS, sc["workload"], "scenario.workload")
    sc["tabu"] = _merge(TABU_DEFAULTS, sc["tabu"], "scenario.tabu")
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    if sc["fixture"] is not None:
        fx = _resolve_fixture(sc["fixture"], base_dir)
        sc["period"], sc["slots"] = fx.network.grid.period, fx.network.grid.slots
        sc["delta"] = fx.network.delta
    _validate_scenario(sc)
    try:
        TabuParams(**sc["tabu"])
    except ValueError as exc:
        raise ConfigError("scenario.tabu", str(exc)) from None
    sweep = doc.get("sweep")
    if sweep is None:
        sweep = {"axis": "ttl", "values": [sc["workload"]["ttl"]]}
    sweep = _merge({"axis": None, "values": None}, sweep, "sweep")
    if sweep["axis"] not in AXES:
        raise ConfigError("sweep.axis", f"must be one of {list(AXES)}")
    if not isinstance(sweep["values"], list) or not sweep["values"]:
        raise ConfigError("sweep.values", "need at least one sweep point")
    if sweep["axis"] == "nodes" and sc["fixture"] is not None:
        raise ConfigError("sweep.axis", "a fixture scenario has a fixed node set")
    protocols = doc.get("protocols")
    if not isinstance(protocols, list) or not protocols:
        raise ConfigError("protocols", "need at least one protocol")
    for i, p in enumerate(protocols):
        if p not in PROTOCOLS:
            raise ConfigError(f"protocols[{i}]", f"unknown protocol {p!r}")
    seeds = doc.get("seeds", 1)
    if not isinstance(seeds, int) or seeds < 1:
        raise ConfigError("seeds", "need at least one seed")
    output = _merge(OUTPUT_DEFAULTS, doc.get("output"), "output")
    return ExperimentSpec(sc, sweep["axis"], list(sweep["values"]), list(protocols), seeds,
                          int(doc.get("master_seed", 0)), output, int(doc.get("jobs", 1)), base_dir)


def _resolve_fixture(name, base_dir: Path):
    p = Path(name)
    if not p.is_absolute():
        p = base_dir / p
    if not p.exists():
        raise ConfigError("scenario.fixture", f"fixture {name} not found")
    return load_fixture(p)


def build_scenario(sc: dict, protocol: str, axis: str, value, seed: int, base_dir: Path = Path("."),
                   strict: bool = True) -> Scenario:
    wl = dict(sc["workload"])
    buffer = sc["buffer"]
    nodes = sc["nodes"]
    if axis == "ttl":
        wl["ttl"] = float(value)
    elif axis == "buffer":
        buffer = None if value is None else int(value)
    elif axis == "nodes":
        nodes = int(value)
    common = dict(dwell_mean=float(sc["dwell_mean"]), buffer=buffer, protocol=protocol, copies=int(sc["copies"]),
                  tabu=TabuParams(**sc["tabu"]), knowledge=sc["knowledge"],
                  warmup_periods=int(sc["warmup_periods"]), seed=seed, delta=float(sc["delta"]),
                  deposit=sc["deposit"], direct_delivery=bool(sc["direct_delivery"]), strict=strict)
    if sc["fixture"] is not None:
        fx = _resolve_fixture(sc["fixture"], base_dir)
        common.pop("delta")
        scen = fixture_scenario(fx.network, fx.destination, fx.source, wl["ttl"], **common)
        if wl["messages"] is not None:
            # explicit messages name nodes by their position in the fixture's sorted node list
            scen.workload = Workload(**wl)
        if sc["duration"] is not None:
            scen.duration = float(sc["duration"])
        return scen
    duration = sc["duration"]
    if duration is None:
        duration = 4 * float(sc["period"])
    # mobility varies with the seed index but not with the sweep value
    return synthetic_scenario(nodes=nodes, locations=sc["locations"], slots=sc["slots"],
                              period=float(sc["period"]), communities=sc["communities"],
                              home_rate=float(sc["home_rate"]), roam_rate=float(sc["roam_rate"]),
                              duration=float(duration), workload=Workload(**wl), **dict(common, seed=seed))


@dataclass
class RunResult:
    protocol: str
    value: object
    index: int
    seed: int
    report: Optional[MetricsReport]
    events: list
    fault: Optional[str] = None
    trace: list = field(default_factory=list)


@dataclass
class ReportTable:
    axis: str
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"axis": self.axis, "columns": list(CSV_COLUMNS), "rows": self.rows}

    def row(self, protocol: str, value) -> dict:
        for r in self.rows:
            if r["protocol"] == protocol and r["value"] == value:
                return r
        raise KeyError((protocol, value))


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def _stats(values: list) -> tuple[float, float]:
    arr = np.array([v for v in values if not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate(axis: str, results: list) -> ReportTable:
    groups: dict = {}
    for r in results:
        if r.report is not None:
            groups.setdefault((r.protocol, r.value), []).append(r)
    rows = []
    for (protocol, value), runs in groups.items():
        runs.sort(key=lambda r: r.index)
        row = {"protocol": protocol, "axis": axis, "value": value, "seed_count": len(runs)}
        for m in METRICS:
            mean, std = _stats([getattr(r.report, m) for r in runs])
            row[m], row[m + "_std"] = mean, std
        row["violations"] = {}
        for r in runs:
            for k, v in r.report.violations.items():
                row["violations"][k] = row["violations"].get(k, 0) + v
        rows.append(row)
    return ReportTable(axis, rows)


def _one_run(job) -> RunResult:
    spec, protocol, value, index, logs = job
    scen = spec.scenario_for(protocol, value, index)
    try:
        report, events = run(scen, record_log=logs)
        return RunResult(protocol, value, index, scen.seed, report, events)
    except InvariantFault as exc:
        return RunResult(protocol, value, index, scen.seed, None, [], str(exc), exc.trace)


def run_experiment(spec: ExperimentSpec, write: bool = True) -> tuple[ReportTable, list]:
    """Run every (protocol, point, seed) triple; returns the table and the raw results."""
    logs = bool(spec.output["logs"]) and write
    jobs = [(spec, p, v, k, logs) for p in spec.protocols for v in spec.values for k in range(spec.seeds)]
    if spec.jobs > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            results = list(pool.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    table = aggregate(spec.axis, results)
    if write:
        out = spec.out_dir
        out.mkdir(parents=True, exist_ok=True)
        (out / spec.output["csv"]).write_text(table.to_csv())
        faults = [{"protocol": r.protocol, "value": r.value, "seed_index": r.index, "seed": r.seed,
                   "error": r.fault, "trace": str(_trace_path(out, r))} for r in results if r.fault]
        doc = dict(table.to_json(), faults=faults, seeds=spec.seeds, master_seed=spec.master_seed)
        (out / spec.output["json"]).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
        if logs:
            (out / "logs").mkdir(exist_ok=True)
            for r in results:
                write_log(r.events if r.fault is None else r.trace, _trace_path(out, r))
    return table, results


def _trace_path(out: Path, r: RunResult) -> Path:
    return out / "logs" / f"{r.protocol}_{r.value}_seed{r.index}.ndjson"


def sign_test(wins: int, losses: int) -> float:
    """One-sided p-value of ``wins`` successes among the non-tied pairs."""
    from scipy.stats import binomtest

    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)


def default_config_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("mpar") / "data" / "worked_example.yaml"))
