"""Regression fixtures: load, evaluate and compare against stored expectations."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Network, meeting_intervals
from .optimizer import TabuParams, brute_force_opt, local_search, tabu_search
from .prob import CoDelivery, RateContext, expected_delay


class FixtureError(RuntimeError):
    """Fixture directory or document unusable."""


@dataclass
class Fixture:
    name: str
    network: Network
    destination: object
    source: object
    ttl: float
    expected: dict
    errata: list = field(default_factory=list)

    def model(self, ttl: Optional[float] = None) -> CoDelivery:
        ctx = RateContext(self.network.rates(), self.destination, self.ttl if ttl is None else ttl)
        return CoDelivery(self.network, ctx, self.network.grid.full())

    def node_key(self, key: str) -> list:
        """Decode an expectation key such as ``"1,2"`` into node ids."""
        lookup = {str(x): x for x in self.network.nodes}
        return [lookup[k] for k in key.split(",")]


def default_fixture_dir() -> Path:
    return Path(str(resources.files("mpar") / "data"))


def load_fixture(path) -> Fixture:
    with open(path) as fh:
        doc = json.load(fh)
    net = Network.from_json(doc)
    lookup = {str(x): x for x in net.nodes}
    ttl = doc.get("ttl")
    return Fixture(doc.get("name", Path(path).stem), net, lookup[str(doc["destination"])],
                   lookup[str(doc["source"])] if "source" in doc else None,
                   math.inf if ttl is None else float(ttl), doc.get("expected", {}), doc.get("errata", []))


def worked_example() -> Fixture:
    return load_fixture(default_fixture_dir() / "worked_example.json")


@dataclass
class Check:
    name: str
    ok: bool
    expected: object
    actual: object

    def line(self) -> str:
        if self.ok:
            return f"PASS  {self.name}"
        return f"FAIL  {self.name}: expected {self.expected}, got {self.actual}"


def _close(a, b, tol) -> bool:
    return bool(np.all(np.abs(np.asarray(a, float) - np.asarray(b, float)) <= tol + 1e-12))


def _rounded(x, digits=4):
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_rounded(v, digits) for v in x]
    return round(float(x), digits)


def check_fixture(fx: Fixture) -> list[Check]:
    """Recompute every expectation the fixture carries."""
    exp, net, out = fx.expected, fx.network, []
    full = net.grid.full()
    model = fx.model()
    if "accumulated" in exp:
        item = exp["accumulated"]
        got = net.accumulate([fx.node_key(str(x))[0] for x in item["nodes"]], full)
        out.append(Check("accumulated record", _close(got, item["value"], item["tol"]),
                         item["value"], _rounded(got)))
    for key, bits in exp.get("patterns", {}).items():
        got = list(net.pattern(fx.node_key(key), full).bits)
        out.append(Check(f"pattern {{{key}}}", got == list(bits), list(bits), got))
    for key, locs in exp.get("locations", {}).items():
        nodes = fx.node_key(key)
        got = sorted(net.frequent_locations(nodes, full))
        out.append(Check(f"locations {{{key}}}", got == sorted(locs), sorted(locs), got))
    if "meeting_intervals" in exp:
        tol = exp["meeting_intervals"]["tol"]
        for key, row in exp["meeting_intervals"]["values"].items():
            got = meeting_intervals(net.records[fx.node_key(key)[0]]).intervals
            out.append(Check(f"meeting intervals {key}", _close(got, row, tol), row, _rounded(got)))
    if "probabilities" in exp:
        tol = exp["probabilities"]["tol"]
        for key, p in exp["probabilities"]["values"].items():
            got = model.set_probability(fx.node_key(key))
            out.append(Check(f"P{{{key}}}", abs(got - p) <= tol, p, _rounded(got)))
    if "expected_delays" in exp:
        tol = exp["expected_delays"]["tol"]
        for key, d in exp["expected_delays"]["values"].items():
            node = fx.node_key(key)[0]
            got = expected_delay(node, sorted(net.frequent_locations([node], full)), model.ctx)
            out.append(Check(f"E[D] {key}", abs(got - d) <= tol, d, _rounded(got)))
    if "optimum" in exp:
        best = brute_force_opt(model, model.size)
        want = model.vector(fx.node_key(",".join(map(str, exp["optimum"]["relays"]))))
        p = model.probability(best)
        out.append(Check("optimal relay set", best == want and abs(p - exp["optimum"]["probability"]) <= 0.005,
                         [list(want), exp["optimum"]["probability"]], [list(best), _rounded(p)]))
    if "local_search" in exp:
        ls = exp["local_search"]
        x, trace = local_search(tuple(ls["start"]), model)
        cands = [[list(c.x), round(c.probability, 3)] for c in trace[-1].candidates]
        ok = list(x) == ls["stop"] and abs(model.probability(x) - ls["probability"]) <= 0.005 \
            and _same_candidates(trace[-1].candidates, ls["candidates"])
        out.append(Check("local search stop state", ok, [ls["stop"], ls["probability"], ls["candidates"]],
                         [list(x), _rounded(model.probability(x)), cands]))
    if "tabu_search" in exp:
        out.extend(_check_tabu(exp["tabu_search"], model))
    return out


def _same_candidates(cands, want, with_status=False) -> bool:
    if len(cands) != len(want):
        return False
    for c, w in zip(cands, want):
        if list(c.x) != list(w[0]) or abs(c.probability - w[1]) > 0.005:
            return False
        if with_status and ("choosable" if c.choosable else "tabu") != w[2]:
            return False
    return True


def _check_tabu(ts: dict, model: CoDelivery) -> list[Check]:
    params = TabuParams(theta=ts["theta"], fixed_length=ts["fixed_length"])
    best, trace = tabu_search(tuple(ts["start"]), model, params)
    out = [Check("tabu step count", len(trace) == len(ts["steps"]), len(ts["steps"]), len(trace))]
    for k, (step, want) in enumerate(zip(trace, ts["steps"]), start=1):
        got = step.to_json()
        ok = (list(step.x_now) == want["x_now"] and list(step.x_best) == want["x_best"]
              and list(step.table) == want["table"]
              and abs(got["P_now"] - want["P_now"]) <= 0.005 and abs(got["P_best"] - want["P_best"]) <= 0.005
              and _same_candidates(step.candidates, want["candidates"], with_status=True))
        shown = {"x_now": list(step.x_now), "x_best": list(step.x_best), "table": list(step.table),
                 "candidates": [[list(c.x), round(c.probability, 3), "choosable" if c.choosable else "tabu"]
                                for c in step.candidates]}
        out.append(Check(f"tabu step {k}", ok, want, shown))
    p = model.probability(best)
    out.append(Check("tabu best", list(best) == ts["best"] and abs(p - ts["probability"]) <= 0.005,
                     [ts["best"], ts["probability"]], [list(best), _rounded(p)]))
    return out


@dataclass
class VerifyReport:
    checks: dict

    @property
    def ok(self) -> bool:
        return all(c.ok for cs in self.checks.values() for c in cs)

    def lines(self) -> list[str]:
        out = []
        for name, cs in self.checks.items():
            out.append(f"[{name}]")
            out.extend("  " + c.line() for c in cs)
        n = sum(len(cs) for cs in self.checks.values())
        bad = sum(not c.ok for cs in self.checks.values() for c in cs)
        out.append(f"{n - bad}/{n} checks passed" + ("" if bad == 0 else f", {bad} FAILED"))
        return out


def verify_fixtures(directory=None) -> VerifyReport:
    directory = Path(directory) if directory is not None else default_fixture_dir()
    if not directory.is_dir():
        raise FixtureError(f"fixture directory {directory} does not exist")
    paths = sorted(directory.glob("*.json"))
    if not paths:
        raise FixtureError(f"no fixtures found in {directory}")
    checks = {}
    for path in paths:
        fx = load_fixture(path)
        found = check_fixture(fx)
        if not found:
            raise FixtureError(f"fixture {path.name} carries no expectations")
        checks[fx.name] = found
    return VerifyReport(checks)
