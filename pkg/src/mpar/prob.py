"""Delivery probability and expected delay under exponential visit times."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ContractError, Network, Node, ParameterError, SlotInterval

# stands in for log(0) so that objective values stay totally ordered
LOG_ZERO = -1e300


@dataclass(frozen=True)
class RateContext:
    rates: Mapping
    destination: Node
    ttl: float = math.inf

    def __post_init__(self):
        if not self.ttl > 0:
            raise ParameterError("ttl must be positive")
        for node, row in self.rates.items():
            row = np.asarray(row, dtype=float)
            if np.any(row < 0) or not np.all(np.isfinite(row)):
                raise ParameterError(f"rates of node {node!r} must be finite and nonnegative")

    def rate(self, node: Node, location: int) -> float:
        return float(self.rates[node][location])


@dataclass(frozen=True)
class DeliveryEstimate:
    probability: float
    relay_set: frozenset
    common_locations: frozenset


def race_probability(rate_relay: float, rate_dest: float, ttl: float = math.inf) -> float:
    """P(relay arrives before the destination, which arrives before ``ttl``).

    Both arrival times are exponential. The result is clamped to [0, 1].
    """
    if rate_relay < 0 or rate_dest < 0:
        raise ParameterError("rates must be nonnegative")
    if rate_relay == 0 or rate_dest == 0:
        return 0.0
    total = rate_relay + rate_dest
    if math.isinf(ttl):
        q = rate_relay / total
    else:
        q = (rate_relay / total) * -math.expm1(-ttl * total) \
            - math.exp(-ttl * rate_dest) * -math.expm1(-ttl * rate_relay)
    return min(1.0, max(0.0, q))


def pairwise_delivery_prob(node: Node, ctx: RateContext, locations: Iterable[int]) -> float:
    if node == ctx.destination:
        raise ContractError("relay and destination must differ")
    miss = 1.0
    for j in locations:
        miss *= 1.0 - race_probability(ctx.rate(node, j), ctx.rate(ctx.destination, j), ctx.ttl)
    return 1.0 - miss


def _log_miss(relays, ctx: RateContext, locations) -> float:
    total = 0.0
    for i in relays:
        for j in locations:
            q = race_probability(ctx.rate(i, j), ctx.rate(ctx.destination, j), ctx.ttl)
            if q >= 1.0:
                return LOG_ZERO
            total += math.log1p(-q)
    return max(total, LOG_ZERO)


def set_delivery_prob(relays: Iterable[Node], ctx: RateContext, network: Network,
                      interval: SlotInterval) -> DeliveryEstimate:
    """Co-delivery probability of a relay set acting through shared locations.

    The common location set is recomputed from the relays' aggregate pattern.
    """
    relays = frozenset(relays)
    if ctx.destination in relays:
        raise ContractError("destination cannot be part of its own relay set")
    if not relays:
        return DeliveryEstimate(0.0, relays, frozenset())
    common = network.common_locations(sorted(relays), ctx.destination, interval)
    if not common:
        return DeliveryEstimate(0.0, relays, common)
    miss = 1.0
    for i in relays:
        miss *= 1.0 - pairwise_delivery_prob(i, ctx, common)
    return DeliveryEstimate(min(1.0, max(0.0, 1.0 - miss)), relays, common)


def expected_delay(node: Node, locations: Iterable[int], ctx: RateContext) -> float:
    """Mean time until ``node`` next reaches one of its frequent locations."""
    total = sum(ctx.rate(node, j) for j in locations)
    return math.inf if total <= 0 else 1.0 / total


@dataclass
class CoDelivery:
    """Binds a network, rate context and interval into set evaluations.

    Solution vectors index ``candidates`` (every node except the destination,
    in ascending order by default).
    """

    network: Network
    ctx: RateContext
    interval: SlotInterval
    candidates: Sequence = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.candidates is None:
            self.candidates = [x for x in self.network.nodes if x != self.ctx.destination]
        self.candidates = tuple(self.candidates)
        if self.ctx.destination in self.candidates:
            raise ContractError("destination cannot be a relay candidate")
        # per-candidate tables so a set evaluation is a couple of array sums
        self._index = {c: i for i, c in enumerate(self.candidates)}
        m = self.network.locations
        self._acc = np.array([self.network.node_vector(c, self.interval) for c in self.candidates]).reshape(-1, m)
        dest = self.network.frequent_locations([self.ctx.destination], self.interval)
        self._dest_mask = np.array([j in dest for j in range(m)], dtype=bool)
        logs = np.zeros((len(self.candidates), m))
        for i, c in enumerate(self.candidates):
            for j in range(m):
                q = race_probability(self.ctx.rate(c, j), self.ctx.rate(self.ctx.destination, j), self.ctx.ttl)
                logs[i, j] = LOG_ZERO if q >= 1.0 else math.log1p(-q)
        self._logs = logs

    @property
    def size(self) -> int:
        return len(self.candidates)

    def relays(self, x: Sequence[int]) -> frozenset:
        if len(x) != self.size:
            raise ContractError(f"solution vector must have {self.size} bits")
        return frozenset(c for c, b in zip(self.candidates, x) if b)

    def vector(self, relays: Iterable[Node]) -> tuple[int, ...]:
        relays = set(relays)
        return tuple(int(c in relays) for c in self.candidates)

    def _entry(self, relays: frozenset):
        hit = self._cache.get(relays)
        if hit is None:
            if not relays:
                hit = (0.0, frozenset())
            else:
                rows = [self._index[x] for x in relays]
                if len(rows) == 1:
                    mask = np.zeros_like(self._dest_mask)
                    mask[sorted(self.network.frequent_locations(relays, self.interval))] = True
                else:
                    v = self._acc[rows].sum(axis=0)
                    total = v.sum()
                    # same threshold as extract_pattern, inlined for speed
                    mask = v >= self.network.delta / len(v) * total if total > 0 else np.zeros(len(v), bool)
                mask &= self._dest_mask
                common = frozenset(np.flatnonzero(mask).tolist())
                log_miss = max(float(self._logs[rows][:, mask].sum()), LOG_ZERO) if common else 0.0
                hit = (log_miss, common)
            self._cache[relays] = hit
        return hit

    def estimate(self, relays: Iterable[Node]) -> DeliveryEstimate:
        relays = frozenset(relays)
        log_miss, common = self._entry(relays)
        return DeliveryEstimate(0.0 - math.expm1(log_miss), relays, common)

    def set_probability(self, relays: Iterable[Node]) -> float:
        return 0.0 - math.expm1(self._entry(frozenset(relays))[0])

    def probability(self, x: Sequence[int]) -> float:
        return self.set_probability(self.relays(x))

    def objective(self, x: Sequence[int]) -> float:
        """log(1 - P) of the relay set encoded by ``x``."""
        return self._entry(self.relays(x))[0]

    def evaluation(self, x: Sequence[int]) -> float:
        return 0.0 - self.objective(x)

    __call__ = evaluation


def objective_f(x: Sequence[int], model: CoDelivery) -> float:
    return model.objective(x)


def evaluation_p(x: Sequence[int], model: CoDelivery) -> float:
    return model.evaluation(x)


def probability_from_evaluation(p: float) -> float:
    return 0.0 - math.expm1(-p)
