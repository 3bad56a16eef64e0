"""Periodic time grid, movement records and movement-pattern extraction.

Time is measured in hours throughout the package. A node's movement record
stores, per slot of the period and per location, the average visit frequency
(visits per hour); zero means the node never went there during that slot.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

import numpy as np

DEFAULT_DELTA = 0.95

Node = Hashable


class DimensionError(ValueError):
    """Records or vectors with incompatible shapes were combined."""


class ParameterError(ValueError):
    """A model parameter is outside its admissible range."""


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


@dataclass(frozen=True)
class TimeGrid:
    period: float
    slots: int

    def __post_init__(self):
        if self.slots < 1:
            raise ParameterError("slot count must be >= 1")
        if not self.period > 0:
            raise ParameterError("period must be positive")

    @property
    def slot_length(self) -> float:
        return self.period / self.slots

    def boundaries(self) -> list[float]:
        return [k * self.slot_length for k in range(self.slots + 1)]

    def full(self) -> "SlotInterval":
        return SlotInterval(0, self.slots)

    def slot_of(self, t: float) -> int:
        """Slot index (0-based) containing absolute time ``t``."""
        k = int((t % self.period) // self.slot_length)
        return min(k, self.slots - 1)

    def window(self, start: float, duration: float) -> "SlotInterval":
        """Slot-aligned interval covering ``[start, start + duration]``.

        Windows longer than one period collapse to the whole period, so every
        slot is counted exactly once. Shorter windows may wrap past the end of
        the period (``stop > slots``).
        """
        if duration <= 0:
            raise ParameterError("window duration must be positive")
        if math.isinf(duration) or duration >= self.period:
            return self.full()
        length = self.slot_length
        offset = start % self.period
        s = int(offset // length)
        e = int(math.ceil((offset + duration) / length - 1e-9))
        e = max(e, s + 1)
        if e - s >= self.slots:
            return self.full()
        return SlotInterval(s, e)


@dataclass(frozen=True)
class SlotInterval:
    """Half-open range of slot indices ``[start, stop)``.

    Slot ``k`` maps to row ``k % h`` of a record, so an interval may wrap
    around the end of the period but never spans more than ``h`` slots.
    """

    start: int
    stop: int

    def __post_init__(self):
        if not 0 <= self.start < self.stop:
            raise ParameterError(f"invalid slot interval [{self.start}, {self.stop})")

    def rows(self, slots: int) -> list[int]:
        if self.stop - self.start > slots:
            raise ParameterError("interval spans more than one period")
        return [k % slots for k in range(self.start, self.stop)]


@dataclass(frozen=True)
class MovementRecord:
    """h x m matrix of per-slot visit frequencies for one node."""

    owner: Node
    rates: np.ndarray

    def __post_init__(self):
        arr = np.array(self.rates, dtype=float)
        if arr.ndim != 2:
            raise DimensionError("record must be a 2-D slots x locations matrix")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ParameterError("record entries must be finite and nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "rates", arr)

    @property
    def slots(self) -> int:
        return self.rates.shape[0]

    @property
    def locations(self) -> int:
        return self.rates.shape[1]

    @classmethod
    def from_intervals(cls, owner: Node, intervals) -> "MovementRecord":
        """Build a record from mean inter-visit times (``inf`` = never visited)."""
        r = np.asarray(intervals, dtype=float)
        rates = np.zeros(r.shape)
        np.divide(1.0, r, out=rates, where=~np.isinf(r))
        return cls(owner, rates)

    def intervals(self) -> np.ndarray:
        out = np.full(self.rates.shape, np.inf)
        np.divide(1.0, self.rates, out=out, where=self.rates > 0)
        return out

    def to_json(self) -> dict:
        return {
            "node": self.owner,
            "h": self.slots,
            "m": self.locations,
            "rates": self.rates.tolist(),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "MovementRecord":
        rec = cls(doc["node"], doc["rates"])
        if rec.slots != doc["h"] or rec.locations != doc["m"]:
            raise DimensionError(f"record for {doc['node']!r} does not match declared h/m")
        return rec


@dataclass(frozen=True)
class MovementPattern:
    bits: tuple[int, ...]

    @property
    def locations(self) -> frozenset[int]:
        return frozenset(j for j, b in enumerate(self.bits) if b)

    def __iter__(self):
        return iter(self.bits)

    def __len__(self):
        return len(self.bits)


@dataclass(frozen=True)
class MeetingIntervalRow:
    node: Node
    intervals: np.ndarray

    @property
    def rates(self) -> np.ndarray:
        out = np.zeros(self.intervals.shape)
        np.divide(1.0, self.intervals, out=out, where=~np.isinf(self.intervals))
        return out


def _check_delta(delta: float):
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0,1)")


def accumulate(records: Iterable[MovementRecord], interval: SlotInterval) -> np.ndarray:
    """Sum the rows of every record over the slots of ``interval``."""
    records = list(records)
    if not records:
        raise ContractError("accumulate needs at least one record")
    shape = records[0].rates.shape
    for rec in records[1:]:
        if rec.rates.shape != shape:
            raise DimensionError(
                f"record {rec.owner!r} has shape {rec.rates.shape}, expected {shape}"
            )
    rows = interval.rows(shape[0])
    total = np.zeros(shape[1])
    for rec in records:
        total += rec.rates[rows].sum(axis=0)
    return total


def extract_pattern(v, delta: float = DEFAULT_DELTA) -> MovementPattern:
    """Keep the locations whose share reaches ``delta`` times the mean."""
    _check_delta(delta)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ParameterError("accumulated vector must be nonnegative")
    total = v.sum()
    if total <= 0:
        # a node that goes nowhere frequents nothing
        return MovementPattern(tuple(0 for _ in v))
    threshold = delta / len(v) * total
    return MovementPattern(tuple(int(x >= threshold) for x in v))


def movement_pattern(records: Iterable[MovementRecord], interval: SlotInterval,
                     delta: float = DEFAULT_DELTA) -> MovementPattern:
    return extract_pattern(accumulate(records, interval), delta)


def meeting_intervals(record: MovementRecord, interval: SlotInterval | None = None) -> MeetingIntervalRow:
    """Mean inter-visit time per location, averaged over the visited slots.

    Slots in which the location was never visited are left out of the
    average; a location never visited at all gets an infinite interval.
    """
    rows = (interval or SlotInterval(0, record.slots)).rows(record.slots)
    rates = record.rates[rows]
    out = np.full(record.locations, np.inf)
    for j in range(record.locations):
        col = rates[:, j]
        visited = col[col > 0]
        if visited.size:
            # subnormal rates overflow to an infinite interval, i.e. never visited
            with np.errstate(over="ignore"):
                out[j] = float(np.mean(1.0 / visited))
    return MeetingIntervalRow(record.owner, out)


def update_record_online(record: MovementRecord, slot: int, location: int,
                         visits: float, slot_length: float) -> MovementRecord:
    if not 0 <= slot < record.slots or not 0 <= location < record.locations:
        raise IndexError("slot or location out of range")
    rates = record.rates.copy()
    rates[slot, location] = visits / slot_length
    return MovementRecord(record.owner, rates)


@dataclass
class Network:
    """Movement records of every node plus the extraction settings.

    ``declared`` pins the frequent-location pattern of individual nodes,
    overriding extraction for singleton queries. It exists for fixtures that
    publish a node's pattern alongside (and inconsistent with) its records.
    """

    grid: TimeGrid
    records: dict
    delta: float = DEFAULT_DELTA
    declared: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_delta(self.delta)
        shapes = {rec.rates.shape for rec in self.records.values()}
        if len(shapes) > 1:
            raise DimensionError(f"records disagree on shape: {sorted(shapes)}")
        for rec in self.records.values():
            if rec.slots != self.grid.slots:
                raise DimensionError("record slot count does not match the time grid")
        self._acc_cache: dict = {}

    @property
    def nodes(self) -> list:
        return sorted(self.records)

    @property
    def locations(self) -> int:
        return next(iter(self.records.values())).locations

    def node_vector(self, node: Node, interval: SlotInterval) -> np.ndarray:
        key = (node, interval)
        vec = self._acc_cache.get(key)
        if vec is None:
            vec = accumulate([self.records[node]], interval)
            self._acc_cache[key] = vec
        return vec

    def accumulate(self, nodes: Iterable[Node], interval: SlotInterval) -> np.ndarray:
        nodes = list(nodes)
        if not nodes:
            raise ContractError("accumulate needs at least one node")
        return np.sum([self.node_vector(x, interval) for x in nodes], axis=0)

    def pattern(self, nodes: Iterable[Node], interval: SlotInterval) -> MovementPattern:
        nodes = list(nodes)
        if len(nodes) == 1 and nodes[0] in self.declared:
            return MovementPattern(tuple(self.declared[nodes[0]]))
        return extract_pattern(self.accumulate(nodes, interval), self.delta)

    def frequent_locations(self, nodes: Iterable[Node], interval: SlotInterval) -> frozenset[int]:
        return self.pattern(nodes, interval).locations

    def common_locations(self, relays: Iterable[Node], destination: Node,
                         interval: SlotInterval) -> frozenset[int]:
        relays = list(relays)
        if destination in relays:
            raise ContractError("destination cannot be part of its own relay set")
        if not relays:
            return frozenset()
        return self.frequent_locations(relays, interval) & self.frequent_locations([destination], interval)

    def rates(self) -> dict:
        """Visit rates per node from the period-average meeting intervals."""
        return {x: meeting_intervals(rec).rates for x, rec in self.records.items()}

    def to_json(self) -> dict:
        return {
            "period": self.grid.period,
            "slots": self.grid.slots,
            "delta": self.delta,
            "records": [rec.to_json() for rec in self.records.values()],
            "declared_patterns": {str(k): list(v) for k, v in self.declared.items()},
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Network":
        grid = TimeGrid(float(doc["period"]), int(doc["slots"]))
        records = {}
        for item in doc["records"]:
            rec = MovementRecord.from_json(item)
            records[rec.owner] = rec
        declared = {}
        for key, bits in (doc.get("declared_patterns") or {}).items():
            node = _coerce_node(key, records)
            declared[node] = tuple(int(b) for b in bits)
        return cls(grid, records, float(doc.get("delta", DEFAULT_DELTA)), declared)


def _coerce_node(key, records):
    if key in records:
        return key
    for node in records:
        if str(node) == str(key):
            return node
    raise KeyError(f"declared pattern for unknown node {key!r}")


def load_network(path) -> Network:
    with open(path) as fh:
        return Network.from_json(json.load(fh))
