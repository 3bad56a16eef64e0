import json
import math

import numpy as np
import pytest

from mpar.core import ParameterError, TimeGrid
from mpar.sim import (Scenario, Simulation, VisitEvent, Workload, detect_contacts, estimate_records,
                      fixture_scenario, generate_visits, run, synthetic_scenario, write_log)


def two_node(rate_src=0.25, rate_dst=0.3, ttl=5.0, **kw):
    """Node 0 holds one message for node 1; a single shared location."""
    rates = np.array([[[rate_src]], [[rate_dst]]])
    kw.setdefault("protocol", "epidemic")
    return Scenario(rates=rates, period=24.0, duration=max(24.0, ttl), direct_delivery=False, deposit="all",
                    workload=Workload(messages=[(0.0, 0, 1)], ttl=ttl), **kw)


class TestVisits:
    def test_zero_rate_pair_never_visits(self):
        sc = Scenario(rates=np.array([[[0.0, 1.0]], [[1.0, 1.0]]]), period=10, duration=200)
        visits = list(generate_visits(sc))
        assert not [v for v in visits if v.node == 0 and v.location == 0]
        assert [v for v in visits if v.node == 0 and v.location == 1]

    def test_mean_inter_visit(self):
        sc = Scenario(rates=np.array([[[1 / 4.05]]]), period=100, duration=1e5)
        arr = np.array([v.arrival for v in generate_visits(sc)])
        assert np.mean(np.diff(arr)) == pytest.approx(4.05, rel=0.01)

    def test_slot_switching(self):
        # visits only during the first half of each day
        sc = Scenario(rates=np.array([[[2.0], [0.0]]]), period=24, duration=24 * 20)
        for v in generate_visits(sc):
            assert (v.arrival % 24) < 12

    def test_deterministic(self):
        sc = synthetic_scenario(nodes=5, locations=3, seed=3)
        a = [(v.node, v.location, v.arrival, v.departure) for v in generate_visits(sc)]
        b = [(v.node, v.location, v.arrival, v.departure) for v in generate_visits(sc)]
        c = [v.arrival for v in generate_visits(synthetic_scenario(nodes=5, locations=3, seed=4))]
        assert a == b and [x[2] for x in a] != c

    def test_ordered_and_non_overlapping(self):
        sc = synthetic_scenario(nodes=6, locations=3, seed=1, dwell_mean=2.0)
        visits = list(generate_visits(sc))
        assert all(x.arrival <= y.arrival for x, y in zip(visits, visits[1:]))
        last = {}
        for v in visits:
            assert v.departure > v.arrival
            assert v.arrival >= last.get(v.node, -1.0)
            last[v.node] = v.departure


class TestContacts:
    def test_disjoint(self):
        vs = [VisitEvent(0, 0, 0.0, 1.0), VisitEvent(1, 0, 2.0, 3.0)]
        assert list(detect_contacts(vs)) == []

    def test_nested(self):
        vs = [VisitEvent(0, 0, 0.0, 5.0), VisitEvent(1, 0, 1.0, 2.0)]
        got = list(detect_contacts(vs))
        assert len(got) == 1 and got[0].time == 1.0 and (got[0].a, got[0].b) == (0, 1)

    def test_three_present(self):
        vs = [VisitEvent(0, 0, 0.0, 5.0), VisitEvent(1, 0, 1.0, 5.0), VisitEvent(2, 0, 2.0, 5.0)]
        assert {(c.a, c.b) for c in detect_contacts(vs)} == {(0, 1), (0, 2), (1, 2)}

    def test_other_location(self):
        vs = [VisitEvent(0, 0, 0.0, 5.0), VisitEvent(1, 1, 1.0, 2.0)]
        assert list(detect_contacts(vs)) == []


class TestThrowbox:
    def scenario(self, **kw):
        # node 2 is the destination and frequents only location 1
        rates = np.array([[[0.5, 0.5]], [[0.5, 0.5]], [[0.0, 1.0]]])
        kw.setdefault("direct_delivery", False)
        return Scenario(rates=rates, period=24, protocol="none", relays=(0,),
                        workload=Workload(messages=[(0.0, 0, 2)], ttl=10.0), **kw)

    def test_deposit_then_pickup(self):
        visits = [VisitEvent(0, 1, 1.0, 1.5), VisitEvent(2, 1, 3.0, 3.5)]
        report, log = run(self.scenario(), visits=visits)
        assert report.delivered == 1 and report.avg_hops == 2 and report.avg_latency == 3.0
        assert [e["kind"] for e in log if e["kind"] in ("deposit", "deliver")] == ["deposit", "deliver"]

    def test_no_deposit_outside_destination_locations(self):
        visits = [VisitEvent(0, 0, 1.0, 1.5), VisitEvent(2, 1, 3.0, 3.5)]
        report, log = run(self.scenario(), visits=visits)
        assert report.delivered == 0 and not [e for e in log if e["kind"] == "deposit"]

    def test_destination_before_deposit(self):
        visits = [VisitEvent(2, 1, 0.5, 0.7), VisitEvent(0, 1, 1.0, 1.5)]
        report, _ = run(self.scenario(), visits=visits)
        assert report.delivered == 0 and report.in_flight == 0 and report.dropped == 1

    def test_pickup_after_ttl_fails(self):
        visits = [VisitEvent(0, 1, 1.0, 1.5), VisitEvent(2, 1, 11.0, 11.5)]
        report, _ = run(self.scenario(), visits=visits)
        assert report.delivered == 0

    def test_direct_contact_is_one_hop(self):
        visits = [VisitEvent(0, 0, 1.0, 2.0), VisitEvent(2, 0, 1.5, 1.8)]
        report, _ = run(self.scenario(direct_delivery=True), visits=visits)
        assert report.delivered == 1 and report.avg_hops == 1


class TestRun:
    def test_empty_workload(self):
        report, log = run(synthetic_scenario(nodes=4, locations=2))
        assert report.created == 0 and report.delivery_ratio == 0.0 and report.avg_latency == 0.0
        assert log == []

    def test_deterministic(self):
        sc = synthetic_scenario(nodes=8, locations=3, seed=2, protocol="tabu_mpar",
                                workload=Workload(count=10, ttl=6), strict=False)
        assert run(sc) == run(sc)

    @pytest.mark.parametrize("protocol", ["epidemic", "spray_and_wait", "local_mpar", "tabu_mpar"])
    def test_conservation(self, protocol):
        sc = synthetic_scenario(nodes=10, locations=4, seed=5, protocol=protocol, buffer=3,
                                workload=Workload(count=25, ttl=6, size_min=1, size_max=2), strict=False)
        report, _ = run(sc)
        assert report.created == report.delivered + report.dropped + report.in_flight
        assert 0.0 <= report.delivery_ratio <= 1.0

    @pytest.mark.parametrize("protocol", ["local_mpar", "tabu_mpar"])
    def test_hard_invariants_hold(self, protocol):
        # strict runs raise on any breach other than the one documented as soft
        for seed in range(5):
            sc = synthetic_scenario(nodes=9, locations=4, seed=seed, protocol=protocol,
                                    workload=Workload(count=8, ttl=8))
            run(sc, record_log=False)

    def test_learned_knowledge(self):
        sc = synthetic_scenario(nodes=6, locations=3, seed=1, protocol="local_mpar", knowledge="learned",
                                workload=Workload(count=5, ttl=6))
        report, _ = run(sc)
        assert report.created == 5

    def test_log_format(self, tmp_path):
        sc = synthetic_scenario(nodes=6, locations=3, seed=1, workload=Workload(count=3, ttl=6))
        _, log = run(sc)
        path = tmp_path / "log.ndjson"
        write_log(log, path)
        lines = [json.loads(x) for x in path.read_text().splitlines()]
        assert lines and all(set(e) == {"t", "kind", "nodes", "msg", "detail"} for e in lines)
        assert all(a["t"] <= b["t"] for a, b in zip(lines, lines[1:]))

    def test_epidemic_dominates(self):
        totals = {}
        for protocol in ("epidemic", "spray_and_wait", "local_mpar", "tabu_mpar"):
            totals[protocol] = sum(
                run(synthetic_scenario(nodes=10, locations=4, seed=s, protocol=protocol, home_rate=0.2,
                                       workload=Workload(count=15, ttl=4), strict=False), record_log=False)[0].delivered
                for s in range(6))
        assert all(totals["epidemic"] >= v for v in totals.values())

    def test_invalid_scenarios(self):
        with pytest.raises(ParameterError):
            Scenario(rates=np.ones((2, 1, 1)), period=24, duration=10)
        with pytest.raises(ParameterError):
            Scenario(rates=-np.ones((2, 1, 1)))
        with pytest.raises(ParameterError):
            Workload(messages=[(0, 1, 1)])
        with pytest.raises(ParameterError):
            Scenario(rates=np.ones((2, 1, 1)), protocol="df")


def renewal_delivery(ls, ld, tau):
    """P(first relay visit s < tau and a destination visit in (s, tau]) for Poisson visits."""
    if math.isclose(ls, ld):
        return 1 - math.exp(-ls * tau) - ls * tau * math.exp(-ls * tau)
    return 1 - math.exp(-ls * tau) - ls * math.exp(-ld * tau) * (math.exp((ld - ls) * tau) - 1) / (ld - ls)


class TestAgainstOracles:
    RUNS = 6000

    def frequency(self, sc):
        return sum(run(sc, seed=s, record_log=False)[0].delivered for s in range(self.RUNS)) / self.RUNS

    def test_single_relay_renewal_oracle(self):
        sc = two_node(0.25, 0.3, ttl=6.0)
        p = renewal_delivery(0.25, 0.3, 6.0)
        assert abs(self.frequency(sc) - p) <= 3 * math.sqrt(p * (1 - p) / self.RUNS)

    @pytest.mark.xfail(strict=True, reason="repeated visits let the destination arrive first and still "
                                           "collect later; the race formula counts only first arrivals")
    def test_single_relay_race_formula(self):
        from mpar.prob import race_probability
        sc = two_node(1 / 4.2, 1 / 3.4, ttl=200.0)
        p = race_probability(1 / 4.2, 1 / 3.4)
        assert abs(self.frequency(sc) - p) <= 3 * math.sqrt(p * (1 - p) / self.RUNS)


class TestEstimateRecords:
    def test_consistency(self):
        # 84 h slots: about 1050 expected visits, a relative sd near 3%
        sc = Scenario(rates=np.array([[[0.25], [0.0]]]), period=168, duration=168 * 50)
        rec = estimate_records(0, generate_visits(sc), sc.grid, 1, 50)
        assert rec.rates[0, 0] == pytest.approx(0.25, rel=0.05) and rec.rates[1, 0] == 0.0

    def test_zero_visits(self):
        rec = estimate_records(0, [], TimeGrid(24, 2), 3, 1)
        assert not rec.rates.any()

    def test_single_period(self):
        vs = [VisitEvent(0, 1, 1.0, 1.2), VisitEvent(0, 1, 3.0, 3.2), VisitEvent(1, 1, 3.0, 3.2)]
        rec = estimate_records(0, vs, TimeGrid(24, 2), 2, 1)
        assert rec.rates[0, 1] == 2 / 12

    def test_needs_a_period(self):
        with pytest.raises(ParameterError):
            estimate_records(0, [], TimeGrid(24, 2), 2, 0)


def test_fixture_scenario_shape(fx):
    sc = fixture_scenario(fx.network, fx.destination, fx.source, ttl=1000.0, relays=[1, 2, 3], protocol="none")
    assert sc.rates.shape == (4, 2, 2) and sc.relays == (0, 1, 2)
    assert sc.workload.messages == [(0.0, 1, 3)]
    np.testing.assert_allclose(1 / sc.rates[0, 0], [4.05, 3.8], atol=0.005)
