"""Acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict; ``conftest.py`` prints the collected
lines at the end of the session.
"""
import itertools
import math
import time

import numpy as np
import pytest
from scipy import integrate

from mpar.core import MovementRecord, Network, TimeGrid, extract_pattern
from mpar.experiment import parse_config, run_experiment, sign_test
from mpar.fixtures import default_fixture_dir
from mpar.optimizer import TabuParams, brute_force_opt, local_search, tabu_search, tabu_search_restarts, unit_vector
from mpar.prob import CoDelivery, RateContext, expected_delay, race_probability
from mpar.sim import Workload, fixture_scenario, run, synthetic_scenario

VERDICTS: dict = {}


def record(number: int, title: str, ok: bool, detail: str):
    VERDICTS[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    print(VERDICTS[number])
    return ok


# published values from the four-node worked example
PUBLISHED_P = {"1": 0.430, "2": 0.673, "3": 0.291, "1,2": 0.670, "2,3": 0.600, "1,3": 0.626, "1,2,3": 0.789}
PUBLISHED_PATTERNS = {"1": [1, 0], "2": [1, 1], "3": [0, 1], "4": [1, 1],
                      "1,2": [1, 0], "1,3": [0, 1], "2,3": [0, 1], "1,2,3": [0, 1]}
# location sets exactly as listed, 0-based (a1 -> 0, a2 -> 1)
PUBLISHED_LOCATIONS = {"1": [0], "2": [0, 1], "3": [1], "4": [1],
                       "1,2": [0], "1,3": [1], "2,3": [1], "1,2,3": [0, 1]}
PUBLISHED_DELAYS = {1: 4.05, 2: 2.15, 3: 8.3}


def nodes_of(key):
    return [int(k) for k in key.split(",")]


def test_criterion_01_worked_probabilities(fx):
    t0 = time.perf_counter()
    model = fx.model()
    got = {k: model.set_probability(nodes_of(k)) for k in PUBLISHED_P}
    elapsed = time.perf_counter() - t0
    worst = max(abs(got[k] - p) for k, p in PUBLISHED_P.items())
    ok = worst <= 0.005 and elapsed < 1.0
    assert record(1, "worked-example probabilities", ok,
                  f"max |err| {worst:.4f} (tol 0.005), {elapsed * 1000:.1f} ms"), got


def test_criterion_02_pattern_lists(fx):
    t0 = time.perf_counter()
    # plain thresholding of the published records, no pinned patterns
    net = Network(fx.network.grid, fx.network.records, 0.95)
    full = net.grid.full()
    pat_bad, loc_bad = [], []
    for key, bits in PUBLISHED_PATTERNS.items():
        got = list(extract_pattern(net.accumulate(nodes_of(key), full), 0.95).bits)
        if got != bits:
            pat_bad.append(f"P{{{key}}}={got} vs {bits}")
    for key, locs in PUBLISHED_LOCATIONS.items():
        got = sorted(net.frequent_locations(nodes_of(key), full))
        if got != locs:
            loc_bad.append(f"A{{{key}}}={got} vs {locs}")
    elapsed = time.perf_counter() - t0
    ok = not pat_bad and not loc_bad and elapsed < 1.0
    detail = (f"patterns {8 - len(pat_bad)}/8, location sets {8 - len(loc_bad)}/8"
              + ("" if ok else "; mismatches: " + ", ".join(pat_bad + loc_bad)))
    assert record(2, "pattern and location lists", ok, detail)


def test_criterion_03_expected_delays(fx):
    model = fx.model()
    full = fx.network.grid.full()
    got = {n: expected_delay(n, sorted(fx.network.frequent_locations([n], full)), model.ctx)
           for n in PUBLISHED_DELAYS}
    worst = max(abs(got[n] - d) for n, d in PUBLISHED_DELAYS.items())
    assert record(3, "expected delays", worst <= 0.01,
                  ", ".join(f"E[D_{n}]={got[n]:.3f}" for n in got) + f" (max |err| {worst:.4f})")


def test_criterion_04_local_search_table(fx):
    model = fx.model()
    x, trace = local_search((0, 1, 0), model)
    step = trace[-1]
    cands = [(c.x, round(c.probability, 3)) for c in step.candidates]
    want = [((1, 1, 0), 0.670), ((0, 0, 0), 0.0), ((0, 1, 1), 0.600)]
    ok = (x == (0, 1, 0) and abs(model.probability(x) - 0.673) <= 0.005 and len(trace) == 1
          and [c[0] for c in cands] == [w[0] for w in want]
          and all(abs(c[1] - w[1]) <= 0.005 for c, w in zip(cands, want)))
    assert record(4, "local search stop state", ok, f"stop {list(x)} P={model.probability(x):.3f}, candidates {cands}")


def test_criterion_05_tabu_trace(fx):
    model = fx.model()
    best, trace = tabu_search((0, 1, 0), model, TabuParams(theta=3, fixed_length=3))
    xs = [s.x_now for s in trace]
    tables = [s.table for s in trace]
    flags = [[c.choosable for c in s.candidates] for s in trace]
    want_flags = [[True, True, True], [False, True, True], [False, True, False],
                  [False, False, False], [True, False, False]]
    ok = (xs == [(0, 1, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1), (1, 0, 1)]
          and tables == [(0, 0, 0), (3, 0, 0), (2, 0, 3), (1, 3, 2), (0, 2, 1)]
          and flags == want_flags and best == (1, 1, 1) and abs(model.probability(best) - 0.789) <= 0.005)
    assert record(5, "tabu search trace", ok,
                  f"{len(trace)} steps, tables {tables}, best {list(best)} P={model.probability(best):.3f}")


def test_criterion_06_race_quadrature():
    grid_l = np.geomspace(0.05, 5, 5)
    grid_t = np.geomspace(0.1, 50, 4)
    worst = 0.0
    for li, ld, tau in itertools.product(grid_l, grid_l, grid_t):
        oracle, _ = integrate.dblquad(lambda ti, td: li * ld * math.exp(-li * ti - ld * td),
                                      0, tau, 0, lambda td: td, epsabs=1e-13, epsrel=1e-11)
        worst = max(worst, abs(race_probability(li, ld, tau) - oracle))
    assert record(6, "closed form vs quadrature", worst <= 1e-6, f"max |err| {worst:.2e} over 100 points (tol 1e-6)")


def random_instance(rng):
    n = int(rng.integers(2, 13))
    m = int(rng.integers(1, 7))
    h = int(rng.integers(1, 4))
    rates = np.exp(rng.uniform(math.log(0.01), math.log(2.0), size=(n + 1, h, m)))
    grid = TimeGrid(24.0 * h, h)
    net = Network(grid, {i: MovementRecord(i, rates[i]) for i in range(n + 1)})
    dest = n
    ttl = float(np.exp(rng.uniform(math.log(0.5), math.log(100.0))))
    return CoDelivery(net, RateContext(net.rates(), dest, ttl), grid.full())


def test_criterion_07_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    matched = worse_than_local = 0
    instances = 200
    for k in range(instances):
        model = random_instance(rng)
        n = model.size
        start = unit_vector(n, int(rng.integers(n)))
        opt = model.probability(brute_force_opt(model, n))
        tabu, _ = tabu_search_restarts(start, model, TabuParams(seed=k), restarts=5)
        local, _ = local_search(start, model)
        pt, pl = model.probability(tabu), model.probability(local)
        matched += pt >= opt - 1e-12
        worse_than_local += pt < pl - 1e-12
    elapsed = time.perf_counter() - t0
    ok = matched >= 0.9 * instances and worse_than_local == 0 and elapsed < 60
    assert record(7, "tabu vs brute force", ok,
                  f"optimal on {matched}/{instances}, worse than local search on {worse_than_local}, "
                  f"{elapsed:.1f} s")


def synthetic_frozen_network():
    # one slot per period, so the period-average rates equal the records
    rates = np.array([[[0.30, 0.05, 0.20]], [[0.10, 0.40, 0.15]], [[0.25, 0.20, 0.05]], [[0.20, 0.35, 0.30]]])
    return Network(TimeGrid(24.0, 1), {i: MovementRecord(i, rates[i]) for i in range(4)})


def frozen_case(name, network, dest, relays, ttl):
    scenario = fixture_scenario(network, dest, relays[0], ttl, relays=relays, protocol="none",
                                deposit="common", direct_delivery=False)
    ctx = RateContext(network.rates(), dest, ttl)
    p = CoDelivery(network, ctx, network.grid.full()).set_probability(relays)
    return name, scenario, p


def test_criterion_08_simulation_agreement(fx):
    cases = [frozen_case("worked {n1,n2,n3}, ttl 1000 h", fx.network, 4, [1, 2, 3], 1000.0),
             frozen_case("worked {n2}, ttl 6 h", fx.network, 4, [2], 6.0),
             frozen_case("synthetic {0,1,2}, ttl 10 h", synthetic_frozen_network(), 3, [0, 1, 2], 10.0)]
    runs = 10_000
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, scenario, p in cases:
        hits = sum(run(scenario, seed=s, record_log=False)[0].delivered for s in range(runs))
        freq = hits / runs
        band = 3 * math.sqrt(p * (1 - p) / runs)
        inside = abs(freq - p) <= band
        ok &= inside
        parts.append(f"{name}: sim {freq:.4f} vs analytic {p:.4f} +/- {band:.4f} {'ok' if inside else 'OUT'}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    assert record(8, "simulation vs analytic delivery", ok, "; ".join(parts) + f"; {elapsed:.0f} s")


HARD_KINDS = ("single_infectious", "lemma1", "ticket_conservation", "lemma3", "postulation1")


def fuzz_scenario(rng, protocol, seed):
    n = int(rng.integers(3, 16))
    m = int(rng.integers(1, 6))
    h = int(rng.integers(1, 4))
    rates = np.exp(rng.uniform(math.log(0.02), math.log(1.5), size=(n, h, m)))
    rates[rng.random(rates.shape) < 0.3] = 0.0
    buffer = None if rng.random() < 0.5 else int(rng.integers(1, 4))
    wl = Workload(count=2, ttl=float(rng.uniform(2, 12)), end=12.0)
    from mpar.sim import Scenario
    return Scenario(rates=rates, period=24.0, duration=24.0, workload=wl, buffer=buffer, protocol=protocol,
                    seed=seed, strict=False, dwell_mean=float(rng.uniform(0.2, 1.0)))


def test_criterion_09_invariant_fuzz():
    counts = dict.fromkeys(HARD_KINDS + ("lemma2_if", "lemma2_only_if"), 0)
    scenarios = 1000
    per_protocol = {}
    for protocol in ("epidemic", "spray_and_wait", "local_mpar", "tabu_mpar"):
        created = delivered = breaches = 0
        for k in range(scenarios):
            report, _ = run(fuzz_scenario(np.random.default_rng([7, k]), protocol, k), record_log=False)
            created += report.created
            delivered += report.delivered
            for kind, c in report.violations.items():
                counts[kind] += c
                breaches += c
        per_protocol[protocol] = f"{delivered}/{created} delivered, {breaches} breaches"
    ok = all(v == 0 for v in counts.values())
    detail = ", ".join(f"{k}={v}" for k, v in counts.items())
    detail += "; " + ", ".join(f"{p} {d}" for p, d in per_protocol.items())
    assert record(9, "protocol invariants under fuzz", ok, f"{scenarios} scenarios x 4 protocols; {detail}")


def test_criterion_10_ttl_sweep():
    spec = parse_config(default_fixture_dir() / "synthetic_ttl.yaml")
    assert spec.seeds == 20 and spec.axis == "ttl"
    table, results = run_experiment(spec, write=False)
    by = {(r.protocol, r.value, r.index): r.report.delivery_ratio for r in results}
    parts, ok = [], True
    for v in spec.values:
        wins = sum(by["tabu_mpar", v, k] > by["local_mpar", v, k] for k in range(spec.seeds))
        losses = sum(by["tabu_mpar", v, k] < by["local_mpar", v, k] for k in range(spec.seeds))
        p = sign_test(wins, losses)
        mean_ok = table.row("tabu_mpar", v)["delivery_ratio"] >= table.row("local_mpar", v)["delivery_ratio"]
        ok &= p < 0.05 and mean_ok
        parts.append(f"ttl {v}: {wins}+/{losses}- p={p:.3g}")
    for protocol in spec.protocols:
        means = [table.row(protocol, v)["delivery_ratio"] for v in spec.values]
        mono = all(a <= b for a, b in zip(means, means[1:]))
        ok &= mono
        parts.append(f"{protocol} {'monotone' if mono else 'NOT monotone'} "
                     + "/".join(f"{x:.3f}" for x in means))
    assert record(10, "Tabu-MPAR vs Local-MPAR ttl sweep", ok, "; ".join(parts))
