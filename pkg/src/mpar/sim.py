"""Discrete-event simulation of location visits, throwboxes and message routing.

Nodes visit locations as periodic piecewise-homogeneous Poisson processes
(rates in visits per hour, one rate per slot). Each visit lasts an
exponential dwell time, truncated at the node's next arrival so a node is
never in two places at once. Two nodes meet when one arrives while the
other is present; every arrival also meets the location's throwbox.
"""
from __future__ import annotations

import dataclasses
import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .core import DEFAULT_DELTA, MovementRecord, Network, ParameterError, TimeGrid, meeting_intervals, \
    update_record_online
from .optimizer import TabuParams
from .prob import CoDelivery, RateContext, expected_delay
from .protocols import PROTOCOLS, B, Buffer, Copy, Custody, Message, MessageTrack, SprayAndWait, TabuMPAR, \
    state_for_tickets

log = logging.getLogger(__name__)

KNOWLEDGE_MODES = ("oracle", "learned")
DEPOSIT_POLICIES = ("dest", "common", "all", "none")

# seed-sequence stream ids; a run's randomness is split by purpose so that
# mobility is identical across protocols for the same seed
_MOBILITY, _DWELL, _WORKLOAD, _WARMUP, _TABU = range(5)

# every invariant breach is fatal except this one, which the ticket rules
# themselves produce (see the README's notes on invariants)
SOFT_INVARIANTS = frozenset({"lemma2_only_if"})


class InvariantFault(RuntimeError):
    def __init__(self, message: str, violation: dict, trace: list):
        super().__init__(message)
        self.violation = violation
        self.trace = trace


@dataclass
class Workload:
    """Message generation settings.

    Messages are created uniformly in ``[start, end)`` between uniformly
    drawn distinct source/destination pairs unless ``messages`` lists them
    explicitly as ``(time, source, destination)`` triples.
    """

    count: int = 0
    ttl: float = 24.0
    size_min: int = 1
    size_max: int = 1
    start: float = 0.0
    end: Optional[float] = None
    messages: Optional[list] = None

    def __post_init__(self):
        if self.count < 0:
            raise ParameterError("message count must be nonnegative")
        if not self.ttl > 0:
            raise ParameterError("ttl must be positive")
        if not 1 <= self.size_min <= self.size_max:
            raise ParameterError("need 1 <= size_min <= size_max")
        for item in self.messages or []:
            if item[1] == item[2]:
                raise ParameterError("message source and destination must differ")


@dataclass(eq=False)
class Scenario:
    """Everything a run needs; ``rates`` has shape (nodes, slots, locations)."""

    rates: np.ndarray
    period: float = 168.0
    duration: Optional[float] = None
    dwell_mean: float = 0.5
    workload: Workload = field(default_factory=Workload)
    buffer: Optional[int] = None
    protocol: str = "epidemic"
    copies: int = 8
    tabu: TabuParams = field(default_factory=TabuParams)
    knowledge: str = "oracle"
    warmup_periods: int = 4
    seed: int = 0
    delta: float = DEFAULT_DELTA
    deposit: str = "dest"
    direct_delivery: bool = True
    relays: Optional[tuple] = None
    model_network: Optional[Network] = None
    strict: bool = True

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        if self.rates.ndim != 3:
            raise ParameterError("rates must have shape (nodes, slots, locations)")
        if not np.all(np.isfinite(self.rates)) or np.any(self.rates < 0):
            raise ParameterError("rates must be finite and nonnegative")
        if self.duration is None:
            self.duration = self.period
        if self.duration < self.period:
            raise ParameterError("duration must cover at least one period")
        if not self.dwell_mean > 0:
            raise ParameterError("dwell mean must be positive")
        if self.protocol not in PROTOCOLS:
            raise ParameterError(f"unknown protocol {self.protocol!r}; choose from {sorted(PROTOCOLS)}")
        if self.knowledge not in KNOWLEDGE_MODES:
            raise ParameterError(f"knowledge must be one of {KNOWLEDGE_MODES}")
        if self.deposit not in DEPOSIT_POLICIES:
            raise ParameterError(f"deposit must be one of {DEPOSIT_POLICIES}")
        if not 0.0 < self.delta < 1.0:
            raise ParameterError("delta must lie in (0,1)")
        if self.buffer is not None and self.buffer < 1:
            raise ParameterError("buffer capacity must be positive")
        if self.knowledge == "learned" and self.warmup_periods < 1:
            raise ParameterError("learned knowledge needs at least one warm-up period")
        for item in self.workload.messages or []:
            for node in item[1:3]:
                if not 0 <= node < self.nodes:
                    raise ParameterError(f"message endpoint {node} is not a node")
        self._cache: dict = {}

    @property
    def nodes(self) -> int:
        return self.rates.shape[0]

    @property
    def slots(self) -> int:
        return self.rates.shape[1]

    @property
    def locations(self) -> int:
        return self.rates.shape[2]

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.period, self.slots)

    def derived_seed(self, *key: int) -> int:
        return int(np.random.SeedSequence([self.seed, *key]).generate_state(1)[0])

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, stream]))

    def true_network(self) -> Network:
        """Network whose records are the generating rates themselves."""
        net = self._cache.get("truth")
        if net is None:
            records = {i: MovementRecord(i, self.rates[i]) for i in range(self.nodes)}
            net = self._cache["truth"] = Network(self.grid, records, self.delta)
        return net


@dataclass(frozen=True)
class VisitEvent:
    node: int
    location: int
    arrival: float
    departure: float


@dataclass(frozen=True)
class Contact:
    time: float
    location: int
    a: int
    b: int


class _Draws:
    """Buffered unit-exponential draws from one generator."""

    def __init__(self, rng: np.random.Generator, block: int = 256):
        self.rng, self.block = rng, block
        self.buf: list = []
        self.i = 0

    def __call__(self) -> float:
        if self.i == len(self.buf):
            self.buf = self.rng.standard_exponential(self.block).tolist()
            self.i = 0
        self.i += 1
        return self.buf[self.i - 1]


def _next_arrival(column, t: float, slot_length: float, draw, horizon: float) -> float:
    """First arrival after ``t`` of a Poisson process with per-slot rates ``column``."""
    h = len(column)
    k = int(t // slot_length)
    while t < horizon:
        lam = column[k % h]
        end = (k + 1) * slot_length
        if lam > 0:
            nxt = t + draw() / lam
            if nxt < end:
                return nxt
        t, k = end, k + 1
    return math.inf


def _node_visits(node: int, rates, slot_length: float, draw, dwell, horizon: float,
                 start: float = 0.0) -> Iterator[VisitEvent]:
    columns = [rates[:, j].tolist() for j in range(rates.shape[1])]
    heap = []
    for j, col in enumerate(columns):
        if any(col):
            heap.append((_next_arrival(col, start, slot_length, draw, horizon), j))
    heapq.heapify(heap)
    while heap and heap[0][0] < horizon:
        a, j = heapq.heappop(heap)
        heapq.heappush(heap, (_next_arrival(columns[j], a, slot_length, draw, horizon), j))
        dep = min(a + dwell(), heap[0][0])
        yield VisitEvent(node, j, a, dep)


def generate_visits(scenario: Scenario, rng: Optional[np.random.Generator] = None,
                    horizon: Optional[float] = None, start: float = 0.0) -> Iterator[VisitEvent]:
    """Lazily merged, time-ordered visit stream of every node.

    ``rng`` drives arrivals and defaults to the scenario's mobility stream;
    dwell times come from a separate generator derived from it.
    """
    if rng is None:
        rng, dwell_rng = scenario.rng(_MOBILITY), scenario.rng(_DWELL)
    else:
        dwell_rng = np.random.default_rng(rng.integers(0, 2**63))
    horizon = scenario.duration if horizon is None else horizon
    draw = _Draws(rng)
    unit = _Draws(dwell_rng)
    mean = scenario.dwell_mean

    def dwell():
        return unit() * mean

    L = scenario.grid.slot_length
    streams = [_node_visits(i, scenario.rates[i], L, draw, dwell, horizon, start)
               for i in range(scenario.nodes)]
    return heapq.merge(*streams, key=lambda v: (v.arrival, v.node))


class _Presence:
    """Who is at each location right now."""

    def __init__(self, locations: int):
        self.at = [dict() for _ in range(locations)]

    def arrive(self, v: VisitEvent) -> list:
        here = self.at[v.location]
        for x in [x for x, dep in here.items() if dep <= v.arrival or x == v.node]:
            del here[x]
        others = sorted(here)
        here[v.node] = v.departure
        return others


def detect_contacts(visits: Iterable[VisitEvent]) -> Iterator[Contact]:
    """Node-node contacts, one per overlapping pair, fired at the later arrival."""
    presence = None
    for v in visits:
        if presence is None or v.location >= len(presence.at):
            grow = _Presence(v.location + 1)
            if presence is not None:
                grow.at[:len(presence.at)] = presence.at
            presence = grow
        for other in presence.arrive(v):
            yield Contact(v.arrival, v.location, min(other, v.node), max(other, v.node))


@dataclass
class Throwbox:
    """Unbounded custody store at one location."""

    location: int
    store: dict = field(default_factory=dict)

    def purge(self, now: float, tracks: dict) -> list:
        gone = [mid for mid in self.store if tracks[mid].msg.expired(now) or tracks[mid].delivered]
        for mid in gone:
            del self.store[mid]
        return gone

    def deposit(self, mid: int, hops: int, now: float) -> bool:
        if mid in self.store:
            return False
        self.store[mid] = (hops, now)
        return True

    def pickup(self, destination: int, tracks: dict) -> list:
        got = [mid for mid in sorted(self.store) if tracks[mid].msg.destination == destination]
        return [(mid, self.store.pop(mid)[0]) for mid in got]


@dataclass
class MetricsReport:
    created: int = 0
    delivered: int = 0
    dropped: int = 0
    in_flight: int = 0
    transmissions: int = 0
    delivery_ratio: float = 0.0
    avg_latency: float = 0.0
    overhead_ratio: float = 0.0
    avg_hops: float = 0.0
    violations: dict = field(default_factory=dict)

    @property
    def avg_latency_s(self) -> float:
        return self.avg_latency * 3600.0

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["avg_latency_s"] = self.avg_latency_s
        return doc


def compute_metrics(tracks: Sequence[MessageTrack], transmissions: int, dropped: int,
                    violations: dict) -> MetricsReport:
    created = len(tracks)
    if created == 0:
        return MetricsReport(violations=dict(violations))
    done = [t for t in tracks if t.delivered]
    k = len(done)
    report = MetricsReport(created, k, dropped, created - k - dropped, transmissions,
                           k / created, violations=dict(violations))
    if k:
        report.avg_latency = sum(t.delivered_at - t.msg.created_at for t in done) / k
        report.avg_hops = sum(t.delivered_hops for t in done) / k
        report.overhead_ratio = (transmissions - k) / k
    else:
        # no delivery: the cost per delivered message is unbounded
        report.overhead_ratio = math.nan if transmissions else 0.0
    return report


def estimate_records(node: int, visits: Iterable[VisitEvent], grid: TimeGrid, locations: int,
                     periods: int) -> MovementRecord:
    """Per-slot visit frequencies from a node's own visits over ``periods`` periods."""
    if periods < 1:
        raise ParameterError("at least one full period must have elapsed")
    counts = np.zeros((grid.slots, locations))
    for v in visits:
        if v.node == node:
            counts[grid.slot_of(v.arrival), v.location] += 1
    record = MovementRecord(node, np.zeros((grid.slots, locations)))
    for k in range(grid.slots):
        for j in range(locations):
            if counts[k, j]:
                record = update_record_online(record, k, j, counts[k, j] / periods, grid.slot_length)
    return record


def make_router(scenario: Scenario):
    if scenario.relays is not None:
        return Custody(tuple(scenario.relays))
    cls = PROTOCOLS[scenario.protocol]
    if cls is SprayAndWait:
        return cls(scenario.copies)
    if cls is TabuMPAR:
        return cls(scenario.tabu)
    return cls()


def build_workload(scenario: Scenario) -> list:
    wl = scenario.workload
    if wl.messages is not None:
        items = sorted((float(t), int(s), int(d)) for t, s, d in wl.messages)
        sizes = [wl.size_min] * len(items)
    else:
        if wl.count and scenario.nodes < 2:
            raise ParameterError("need at least two nodes to generate messages")
        rng = scenario.rng(_WORKLOAD)
        end = wl.end if wl.end is not None else max(wl.start, scenario.duration - wl.ttl)
        if end <= wl.start:
            end = scenario.duration
        times = np.sort(rng.uniform(wl.start, end, size=wl.count))
        items = []
        for t in times.tolist():
            s = int(rng.integers(scenario.nodes))
            d = int(rng.integers(scenario.nodes - 1))
            items.append((t, s, d + (d >= s)))
        sizes = rng.integers(wl.size_min, wl.size_max + 1, size=wl.count).tolist()
    return [Message(i, s, d, t, wl.ttl, int(z)) for i, ((t, s, d), z) in enumerate(zip(items, sizes))]


class Simulation:
    """One run of a scenario; also the environment the routers act through."""

    def __init__(self, scenario: Scenario, record_log: bool = True):
        self.sc = scenario
        self.grid = scenario.grid
        self.router = make_router(scenario)
        self.record_log = record_log
        self.events: list = []
        self.violations: list = []
        self.counts: dict = {}
        self.transmissions = 0
        self.dropped = 0
        self.now = 0.0
        self.tracks: dict = {}
        self.active: set = set()
        self.held = [set() for _ in range(scenario.nodes)]
        self.buffers = [Buffer(scenario.buffer) for _ in range(scenario.nodes)]
        self.boxes = [Throwbox(j) for j in range(scenario.locations)]
        self.presence = _Presence(scenario.locations)
        self._expiry: list = []
        self._rates: dict = {}
        self._model_key = None
        self._model = None
        self._actions: list = []
        self.network = self._knowledge()

    # -- knowledge -------------------------------------------------------
    def _knowledge(self) -> Network:
        sc = self.sc
        if sc.model_network is not None:
            return sc.model_network
        if sc.knowledge == "oracle":
            return sc.true_network()
        span = sc.warmup_periods * sc.period
        seen = list(generate_visits(sc, sc.rng(_WARMUP), horizon=span))
        records = {i: estimate_records(i, seen, self.grid, sc.locations, sc.warmup_periods)
                   for i in range(sc.nodes)}
        return Network(self.grid, records, sc.delta)

    def _window(self, track: MessageTrack):
        return self.grid.window(self.now, max(track.msg.remaining(self.now), 1e-9))

    def _ctx(self, track: MessageTrack) -> tuple[RateContext, object]:
        interval = self._window(track)
        rates = self._rates.get(interval)
        if rates is None:
            rates = self._rates[interval] = {
                x: meeting_intervals(rec, interval).rates for x, rec in self.network.records.items()}
        return RateContext(rates, track.msg.destination, max(track.msg.remaining(self.now), 1e-9)), interval

    def model(self, track: MessageTrack) -> CoDelivery:
        key = (track.msg.id, self.now)
        if key != self._model_key:
            ctx, interval = self._ctx(track)
            self._model = CoDelivery(self.network, ctx, interval)
            self._model_key = key
        return self._model

    def probability(self, track: MessageTrack, relays) -> float:
        return self.model(track).set_probability(relays)

    def delay(self, track: MessageTrack, node) -> float:
        ctx, interval = self._ctx(track)
        return expected_delay(node, sorted(self.network.frequent_locations([node], interval)), ctx)

    def derived_seed(self, tag: str, ident: int) -> int:
        return self.sc.derived_seed(_TABU, ident)

    # -- mutation API used by routers -------------------------------------
    def log(self, kind: str, nodes, track: Optional[MessageTrack], detail: dict):
        if self.record_log:
            self.events.append({"t": self.now, "kind": kind, "nodes": [int(x) for x in nodes],
                                "msg": None if track is None else track.msg.id, "detail": detail})

    def place(self, track: MessageTrack, node: int, copy: Copy) -> bool:
        ok, evicted = self.buffers[node].admit(track.msg, self.now)
        for mid in evicted:
            self._evict(node, mid)
        if not ok:
            self.log("reject", (node,), track, {"reason": "buffer"})
            return False
        track.copies[node] = copy
        self.held[node].add(track.msg.id)
        return True

    def replicate(self, track: MessageTrack, src: int, dst: int, state=B, tickets: int = 0) -> bool:
        if dst in track.copies:
            self._violate("postulation1", track, {"node": dst})
            return False
        ok, evicted = self.buffers[dst].admit(track.msg, self.now)
        for mid in evicted:
            self._evict(dst, mid)
        if not ok:
            self.log("reject", (src, dst), track, {"reason": "buffer"})
            return False
        track.copies[dst] = Copy(track.copies[src].hops + 1, tickets, state)
        self.held[dst].add(track.msg.id)
        self.transmissions += 1
        self._actions.append("replicate")
        self.log("replicate", (src, dst), track, {"tickets": tickets})
        return True

    def delete(self, track: MessageTrack, node: int, reason: str = "deletion"):
        track.copies.pop(node, None)
        self.held[node].discard(track.msg.id)
        self.buffers[node].remove(track.msg.id)
        self._actions.append("delete")
        self.log("delete", (node,), track, {"reason": reason})

    def set_tickets(self, track: MessageTrack, node: int, tickets: int):
        c = track.copies[node]
        c.tickets, c.state = tickets, state_for_tickets(tickets)

    def set_state(self, track: MessageTrack, node: int, state):
        track.copies[node].state = state

    # -- lifecycle ----------------------------------------------------------
    def _evict(self, node: int, mid: int):
        track = self.tracks[mid]
        self.held[node].discard(mid)
        copy = track.copies.pop(node, None) if mid in self.active else None
        if copy is not None:
            track.buffer_loss = True
            track.lost_tickets += copy.tickets
            self.log("drop", (node,), track, {"reason": "buffer"})

    def _resolve(self, track: MessageTrack):
        self.active.discard(track.msg.id)
        for x in track.copies:
            self.held[x].discard(track.msg.id)

    def _deliver(self, track: MessageTrack, via: str, node: int, hops: int):
        track.delivered_at, track.delivered_hops = self.now, hops
        self.transmissions += 1
        self.log("deliver", (node, track.msg.destination), track, {"via": via, "hops": hops})
        self._resolve(track)

    def _expire(self, t: float):
        while self._expiry and self._expiry[0][0] <= t:
            _, mid = heapq.heappop(self._expiry)
            track = self.tracks[mid]
            if mid in self.active:
                self.now = track.msg.expires_at
                self.dropped += 1
                self.log("drop", tuple(sorted(track.copies)), track, {"reason": "ttl"})
                for x in track.copies:
                    self.buffers[x].remove(mid)
                self._resolve(track)

    def _create(self, msg: Message):
        track = MessageTrack(msg)
        self.tracks[msg.id] = track
        self.active.add(msg.id)
        heapq.heappush(self._expiry, (msg.expires_at, msg.id))
        self.log("create", (msg.source, msg.destination), track, {"ttl": msg.ttl, "size": msg.size})
        self.router.create(track, self)
        if track.n_opt is not None:
            self.log("optimum", sorted(track.n_opt), track, {})
        if not track.copies and not track.undeliverable:
            # the source could not buffer its own message
            self.dropped += 1
            self.log("drop", (msg.source,), track, {"reason": "buffer"})
            self._resolve(track)
            return
        self._monitor(track, {}, None)

    def _arrive(self, v: VisitEvent):
        others = self.presence.arrive(v)
        for y in others:
            self._contact(v.node, y)
        self._throwbox(v.node, v.location)

    def _contact(self, x: int, y: int):
        a, b = min(x, y), max(x, y)
        for mid in sorted(self.held[a] | self.held[b]):
            if mid not in self.active:
                continue
            track = self.tracks[mid]
            dest = track.msg.destination
            if dest in (a, b):
                holder = b if a == dest else a
                if self.sc.direct_delivery and holder in track.copies:
                    self._deliver(track, "contact", holder, track.copies[holder].hops + 1)
                continue
            before = {x: (c.tickets, c.state) for x, c in track.copies.items()}
            self._actions = []
            self.router.encounter(track, a, b, self)
            self._monitor(track, before, (a, b))

    def _deposit_ok(self, track: MessageTrack, loc: int) -> bool:
        policy = self.sc.deposit
        if policy == "all":
            return True
        if policy == "none":
            return False
        window = self._window(track)
        dest = track.msg.destination
        if policy == "dest":
            return loc in self.network.frequent_locations([dest], window)
        relays = sorted(track.copies)
        return loc in self.network.common_locations(relays, dest, window)

    def _throwbox(self, node: int, loc: int):
        box = self.boxes[loc]
        if not box.store and not self.held[node]:
            return
        box.purge(self.now, self.tracks)
        for mid, hops in box.pickup(node, self.tracks):
            track = self.tracks[mid]
            if mid in self.active:
                self._deliver(track, "throwbox", node, hops + 1)
        for mid in sorted(self.held[node]):
            track = self.tracks[mid]
            if mid not in box.store and self._deposit_ok(track, loc):
                box.deposit(mid, track.copies[node].hops + 1, self.now)
                self.transmissions += 1
                self.log("deposit", (node,), track, {"location": loc})

    # -- invariants -----------------------------------------------------------
    def _violate(self, kind: str, track: MessageTrack, detail: dict):
        v = {"kind": kind, "t": self.now, "msg": track.msg.id, "seed": self.sc.seed, "detail": detail}
        self.violations.append(v)
        self.counts[kind] = self.counts.get(kind, 0) + 1
        self.log("violation", (), track, {"kind": kind, **detail})
        if self.sc.strict and kind not in SOFT_INVARIANTS:
            raise InvariantFault(f"{kind} violated for message {track.msg.id} at t={self.now:.6g} "
                                 f"(seed {self.sc.seed})", v, self.events[-50:])

    def _monitor(self, track: MessageTrack, before: dict, pair):
        name = self.sc.protocol if self.sc.relays is None else "none"
        if name == "local_mpar":
            if sum(c.state is B for c in track.copies.values()) > 1:
                self._violate("single_infectious", track, {})
            if pair is not None and self._actions:
                n_b = sum(before.get(x, (0, None))[1] is B for x in pair)
                if n_b != 1:
                    self._violate("lemma1", track, {"pair": list(pair), "actions": list(self._actions)})
        elif name == "tabu_mpar" and not track.undeliverable:
            total = sum(c.tickets for c in track.copies.values()) + track.lost_tickets
            if total != len(track.n_opt):
                self._violate("ticket_conservation", track, {"tickets": total, "target": len(track.n_opt)})
            if track.buffer_loss:
                return
            after = {x: (c.tickets, c.state) for x, c in track.copies.items()}
            if track.reached_opt and pair is not None and after != before:
                self._violate("lemma3", track, {"pair": list(pair)})
            at_opt = track.holders == track.n_opt
            no_b = all(c.state is not B for c in track.copies.values())
            if at_opt and not no_b:
                self._violate("lemma2_if", track, {})
            if no_b and not at_opt:
                self._violate("lemma2_only_if", track, {"holders": sorted(track.holders),
                                                        "n_opt": sorted(track.n_opt)})
            if at_opt:
                track.reached_opt = True

    # -- main loop --------------------------------------------------------------
    def run(self, visits: Optional[Iterable[VisitEvent]] = None) -> MetricsReport:
        """Process the run; ``visits`` replaces the generated mobility (for hand-built cases)."""
        messages = build_workload(self.sc)
        if messages:
            visits = iter(visits) if visits is not None else generate_visits(self.sc)
            nxt = next(visits, None)
            i = 0
            horizon = self.sc.duration
            while True:
                t_c = messages[i].created_at if i < len(messages) else math.inf
                t_v = nxt.arrival if nxt is not None else math.inf
                t = min(t_c, t_v)
                if t > horizon or math.isinf(t):
                    break
                self._expire(t)
                self.now = t
                if t_c <= t_v:
                    self._create(messages[i])
                    i += 1
                else:
                    self._arrive(nxt)
                    nxt = next(visits, None)
                if i == len(messages) and not self.active:
                    break
            self._expire(horizon)
            self.now = max(self.now, horizon) if self.active else self.now
        tracks = [self.tracks[m.id] for m in messages if m.id in self.tracks]
        return compute_metrics(tracks, self.transmissions, self.dropped, self.counts)


def run(scenario: Scenario, seed: Optional[int] = None, record_log: bool = True,
        visits: Optional[Iterable[VisitEvent]] = None) -> tuple[MetricsReport, list]:
    """Simulate ``scenario`` (optionally under another seed); returns metrics and event log."""
    if seed is not None and seed != scenario.seed:
        scenario = reseed(scenario, seed)
    sim = Simulation(scenario, record_log)
    report = sim.run(visits)
    return report, sim.events


def reseed(scenario: Scenario, seed: int) -> Scenario:
    """Copy of ``scenario`` under another seed, sharing its cached read-only network."""
    other = dataclasses.replace(scenario, seed=seed)
    other._cache = scenario._cache
    return other


def write_log(events: Iterable[dict], path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")


def synthetic_scenario(nodes: int = 20, locations: int = 6, slots: int = 4, period: float = 24.0,
                       seed: int = 0, communities: int = 3, home_rate: float = 0.6,
                       roam_rate: float = 0.03, **kwargs) -> Scenario:
    """Community-structured random mobility.

    Each community shares one or two home locations visited at ``home_rate``
    during its active slots; every other location is visited rarely.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99]))
    rates = np.full((nodes, slots, locations), roam_rate)
    homes = [rng.choice(locations, size=min(2, locations), replace=False) for _ in range(communities)]
    for i in range(nodes):
        c = i % communities
        active = rng.random(slots) < 0.75
        active[rng.integers(slots)] = True
        for j in homes[c]:
            scale = rng.uniform(0.5, 1.5)
            rates[i, active, j] = home_rate * scale
        rates[i, :, int(rng.integers(locations))] += roam_rate * 3
    kwargs.setdefault("duration", period * 4)
    return Scenario(rates=rates, period=period, seed=seed, **kwargs)


def fixture_scenario(network: Network, destination, source, ttl: float,
                     relays: Optional[Sequence] = None, **kwargs) -> Scenario:
    """Mobility whose every slot runs at the fixture's period-average rates.

    The fixture network stays the routing model, so analytic probabilities
    computed from it use exactly the simulated rates.
    """
    order = network.nodes
    index = {x: i for i, x in enumerate(order)}
    avg = network.rates()
    rates = np.array([[avg[x]] * network.grid.slots for x in order])
    remapped = Network(network.grid, {index[x]: MovementRecord(index[x], network.records[x].rates)
                                      for x in order}, network.delta,
                       {index[x]: bits for x, bits in network.declared.items()})
    wl = Workload(messages=[(0.0, index[source], index[destination])], ttl=ttl)
    duration = max(network.grid.period, ttl if math.isfinite(ttl) else network.grid.period)
    kwargs.setdefault("duration", duration)
    return Scenario(rates=rates, period=network.grid.period, workload=wl, model_network=remapped,
                    relays=None if relays is None else tuple(index[x] for x in relays), **kwargs)
