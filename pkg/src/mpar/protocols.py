"""Per-message node state machines for the routing protocols.

The pure transition functions encode the encounter rules. The ``Router``
classes apply them to a :class:`MessageTrack` through a small environment
interface supplied by the simulator (see :class:`mpar.sim.Env`).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Optional

from .optimizer import TabuParams, tabu_search, unit_vector

Node = Hashable


class NodeState(enum.Enum):
    PURE = "W"
    INFECTED = "G"
    INFECTIOUS = "B"


W, G, B = NodeState.PURE, NodeState.INFECTED, NodeState.INFECTIOUS


class ProtocolFault(RuntimeError):
    """A protocol reached a state its rules make impossible (a simulator bug)."""


@dataclass(frozen=True)
class Message:
    id: int
    source: Node
    destination: Node
    created_at: float
    ttl: float
    size: int = 1

    @property
    def expires_at(self) -> float:
        return self.created_at + self.ttl

    def expired(self, now: float) -> bool:
        return now - self.created_at >= self.ttl

    def remaining(self, now: float) -> float:
        return self.expires_at - now


@dataclass
class Copy:
    hops: int = 0
    tickets: int = 0
    state: NodeState = B


@dataclass
class MessageTrack:
    """Routing state of one message across the network."""

    msg: Message
    copies: dict = field(default_factory=dict)
    n_opt: Optional[frozenset] = None
    delivered_at: Optional[float] = None
    delivered_hops: Optional[int] = None
    undeliverable: bool = False
    lost_tickets: int = 0
    buffer_loss: bool = False
    reached_opt: bool = False

    @property
    def delivered(self) -> bool:
        return self.delivered_at is not None

    @property
    def holders(self) -> frozenset:
        return frozenset(self.copies)

    def state(self, node: Node) -> NodeState:
        c = self.copies.get(node)
        return W if c is None else c.state

    def tickets(self, node: Node) -> int:
        c = self.copies.get(node)
        return 0 if c is None else c.tickets

    def infectious(self) -> list:
        return sorted((x for x, c in self.copies.items() if c.state is B), key=repr)


@dataclass
class Encounter:
    a: Node
    b: Node
    state_a: NodeState
    state_b: NodeState
    delay_a: float = math.inf
    delay_b: float = math.inf
    tickets_a: int = 0
    tickets_b: int = 0

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("a node cannot encounter itself")


@dataclass(frozen=True)
class LocalOutcome:
    state_a: NodeState
    state_b: NodeState
    action: Optional[str]
    relay_set: frozenset


def local_mpar_transition(enc: Encounter, relay_set, probability: Callable[[frozenset], float]) -> LocalOutcome:
    """Apply the Local-MPAR encounter rules.

    ``relay_set`` is the set maintained by the infectious node and
    ``probability`` evaluates the co-delivery probability of a set.
    """
    relay_set = frozenset(relay_set)
    if enc.state_a is B and enc.state_b is B:
        raise ProtocolFault("two infectious nodes for one message")
    if B not in (enc.state_a, enc.state_b):
        return LocalOutcome(enc.state_a, enc.state_b, None, relay_set)
    swapped = enc.state_b is B
    if swapped:
        other, other_state, d_active, d_other = enc.a, enc.state_a, enc.delay_b, enc.delay_a
    else:
        other, other_state, d_active, d_other = enc.b, enc.state_b, enc.delay_a, enc.delay_b

    active_state, action, new_set = B, None, relay_set
    p_now = probability(relay_set)
    if other_state is W:
        grown = relay_set | {other}
        if probability(grown) > p_now:
            other_state, action, new_set = G, "replicate", grown
    else:
        shrunk = relay_set - {other}
        if probability(shrunk) > p_now:
            other_state, action, new_set = W, "delete", shrunk
        elif d_other < d_active:
            other_state, active_state, action = B, G, "transfer"

    if swapped:
        return LocalOutcome(other_state, active_state, action, new_set)
    return LocalOutcome(active_state, other_state, action, new_set)


def state_for_tickets(tickets: int) -> NodeState:
    if tickets >= 2:
        return B
    return G if tickets == 1 else W


def _id_le(a, b) -> bool:
    try:
        return a <= b
    except TypeError:
        return repr(a) <= repr(b)


def allocate_tickets(tickets_a: int, tickets_b: int, delay_a: float, delay_b: float,
                     a_id=0, b_id=1) -> tuple[int, int]:
    """Split the pair's pooled tickets in inverse proportion to expected delay.

    Both shares stay >= 1 whenever the pool holds at least two tickets. The
    rounding rule is applied to the lower-id node, so swapping the pair
    mirrors the result.
    """
    pool = tickets_a + tickets_b
    if pool <= 1:
        return tickets_a, tickets_b
    if not _id_le(a_id, b_id):
        b, a = allocate_tickets(tickets_b, tickets_a, delay_b, delay_a, b_id, a_id)
        return a, b
    if math.isinf(delay_a) and math.isinf(delay_b):
        half, rest = divmod(pool, 2)
        return half + rest, half
    if math.isinf(delay_a):
        share = 0.0
    elif math.isinf(delay_b):
        share = float(pool)
    else:
        share = delay_b / (delay_a + delay_b) * pool
    a = math.ceil(share) if share < 1 else math.floor(share)
    a = min(max(a, 1), pool - 1)
    return a, pool - a


@dataclass(frozen=True)
class TabuOutcome:
    tickets_a: int
    tickets_b: int
    action: Optional[str]

    @property
    def state_a(self) -> NodeState:
        return state_for_tickets(self.tickets_a)

    @property
    def state_b(self) -> NodeState:
        return state_for_tickets(self.tickets_b)


def tabu_mpar_transition(enc: Encounter, n_opt) -> TabuOutcome:
    """Apply the Tabu-MPAR encounter rules to the pair's ticket counts."""
    ta, tb = enc.tickets_a, enc.tickets_b
    for t, s in ((ta, enc.state_a), (tb, enc.state_b)):
        if state_for_tickets(t) is not s:
            raise ProtocolFault(f"ticket count {t} inconsistent with state {s.value}")
    if ta >= 2 or tb >= 2:
        na, nb = allocate_tickets(ta, tb, enc.delay_a, enc.delay_b, enc.a, enc.b)
        if (na, nb) == (ta, tb):
            return TabuOutcome(ta, tb, None)
        action = "replicate" if (ta == 0 or tb == 0) else "tickets"
        return TabuOutcome(na, nb, action)
    if ta == 1 and tb == 0 and enc.a not in n_opt and enc.b in n_opt:
        return TabuOutcome(0, 1, "handover")
    if tb == 1 and ta == 0 and enc.b not in n_opt and enc.a in n_opt:
        return TabuOutcome(1, 0, "handover")
    return TabuOutcome(ta, tb, None)


def epidemic_transition(state_a: NodeState, state_b: NodeState) -> tuple[NodeState, NodeState]:
    if (state_a is B) != (state_b is B) and W in (state_a, state_b):
        return B, B
    return state_a, state_b


def spray_and_wait_transition(tickets_a: int, tickets_b: int) -> tuple[int, int]:
    """Binary spray: a holder with k >= 2 tickets hands floor(k/2) to a pure node."""
    if tickets_a >= 2 and tickets_b == 0:
        give = tickets_a // 2
        return tickets_a - give, give
    if tickets_b >= 2 and tickets_a == 0:
        give = tickets_b // 2
        return give, tickets_b - give
    return tickets_a, tickets_b


class Buffer:
    """Byte-bounded message store with earliest-expiry-first eviction."""

    def __init__(self, capacity: Optional[int] = None):
        self.capacity = capacity
        self.items: dict = {}

    @property
    def used(self) -> int:
        return sum(m.size for m in self.items.values())

    def __contains__(self, msg_id):
        return msg_id in self.items

    def remove(self, msg_id):
        self.items.pop(msg_id, None)

    def purge(self, now: float) -> list:
        gone = [mid for mid, m in self.items.items() if m.expired(now)]
        for mid in gone:
            del self.items[mid]
        return gone

    def plan(self, msg: Message, now: float) -> Optional[list]:
        """Message ids to evict so ``msg`` fits, or ``None`` if it must be rejected.

        Only messages expiring strictly before ``msg`` may be evicted.
        """
        if self.capacity is None:
            return []
        if msg.size > self.capacity:
            return None
        live = {mid: m for mid, m in self.items.items() if not m.expired(now)}
        free = self.capacity - sum(m.size for m in live.values())
        victims = []
        for mid, m in sorted(live.items(), key=lambda kv: (kv[1].expires_at, kv[0])):
            if free >= msg.size:
                break
            if m.expires_at >= msg.expires_at:
                break
            victims.append(mid)
            free += m.size
        return victims if free >= msg.size else None

    def admit(self, msg: Message, now: float) -> tuple[bool, list]:
        self.purge(now)
        victims = self.plan(msg, now)
        if victims is None:
            return False, []
        for mid in victims:
            del self.items[mid]
        self.items[msg.id] = msg
        return True, victims


def expire_or_drop(msg: Message, now: float, buffer: Optional[Buffer] = None) -> str:
    """'drop' for expired messages or incoming ones the buffer cannot take, else 'keep'."""
    if msg.expired(now):
        return "drop"
    if buffer is not None and msg.id not in buffer and buffer.plan(msg, now) is None:
        return "drop"
    return "keep"


class Router:
    """Base class; subclasses set up copies on creation and react to encounters."""

    name = "router"
    ticketed = False

    def create(self, track: MessageTrack, env) -> None:
        env.place(track, track.msg.source, Copy(0, 0, B))

    def encounter(self, track: MessageTrack, a: Node, b: Node, env) -> None:
        raise NotImplementedError


class Custody(Router):
    """No replication at all; holders only wait (used for frozen relay sets)."""

    name = "none"

    def __init__(self, relays: Optional[tuple] = None):
        self.relays = relays

    def create(self, track, env):
        if self.relays is None:
            return super().create(track, env)
        for x in self.relays:
            if x != track.msg.destination:
                env.place(track, x, Copy(0, 0, B))

    def encounter(self, track, a, b, env):
        return None


class Epidemic(Router):
    name = "epidemic"

    def encounter(self, track, a, b, env):
        sa, sb = track.state(a), track.state(b)
        na, nb = epidemic_transition(sa, sb)
        if na is not sa:
            env.replicate(track, b, a, state=B)
        elif nb is not sb:
            env.replicate(track, a, b, state=B)


class SprayAndWait(Router):
    name = "spray_and_wait"
    ticketed = True

    def __init__(self, copies: int = 8):
        if copies < 1:
            raise ValueError("spray-and-wait needs at least one copy")
        self.copies = copies

    def create(self, track, env):
        env.place(track, track.msg.source, Copy(0, self.copies, state_for_tickets(self.copies)))

    def encounter(self, track, a, b, env):
        ta, tb = track.tickets(a), track.tickets(b)
        na, nb = spray_and_wait_transition(ta, tb)
        if (na, nb) == (ta, tb):
            return
        src, dst, keep, give = (a, b, na, nb) if ta else (b, a, nb, na)
        if env.replicate(track, src, dst, state=state_for_tickets(give), tickets=give):
            env.set_tickets(track, src, keep)


class LocalMPAR(Router):
    name = "local_mpar"

    def encounter(self, track, a, b, env):
        sa, sb = track.state(a), track.state(b)
        if B not in (sa, sb):
            if sa is B and sb is B:
                raise ProtocolFault("two infectious nodes for one message")
            return
        # delays are only consulted in the infected/infectious case
        need_delay = G in (sa, sb)
        enc = Encounter(a, b, sa, sb,
                        env.delay(track, a) if need_delay else math.inf,
                        env.delay(track, b) if need_delay else math.inf)
        out = local_mpar_transition(enc, track.holders, lambda s: env.probability(track, s))
        active, other = (a, b) if sa is B else (b, a)
        if out.action == "replicate":
            env.replicate(track, active, other, state=G)
        elif out.action == "delete":
            env.delete(track, other, reason="deletion")
        elif out.action == "transfer":
            env.set_state(track, other, B)
            env.set_state(track, active, G)
            env.log("transfer", (active, other), track, {})


class TabuMPAR(Router):
    name = "tabu_mpar"
    ticketed = True

    def __init__(self, params: Optional[TabuParams] = None):
        self.params = params or TabuParams()

    def create(self, track, env):
        model = env.model(track)
        msg = track.msg
        n = model.size
        if msg.source in model.candidates:
            start = unit_vector(n, model.candidates.index(msg.source))
        else:
            start = (0,) * n
        params = TabuParams(self.params.theta, self.params.sigma, self.params.fixed_length,
                            env.derived_seed("tabu", msg.id))
        best, _ = tabu_search(start, model, params)
        track.n_opt = model.relays(best)
        k = len(track.n_opt)
        if k == 0:
            track.undeliverable = True
            env.log("undeliverable", (msg.source,), track, {})
            return
        env.place(track, msg.source, Copy(0, k, state_for_tickets(k)))

    def encounter(self, track, a, b, env):
        ta, tb = track.tickets(a), track.tickets(b)
        if ta == 0 and tb == 0:
            return
        pooling = ta >= 2 or tb >= 2
        enc = Encounter(a, b, track.state(a), track.state(b),
                        env.delay(track, a) if pooling else math.inf,
                        env.delay(track, b) if pooling else math.inf, ta, tb)
        out = tabu_mpar_transition(enc, track.n_opt)
        if out.action is None:
            return
        na, nb = out.tickets_a, out.tickets_b
        if ta == 0 or tb == 0:
            src, dst, got = (b, a, na) if ta == 0 else (a, b, nb)
            if not env.replicate(track, src, dst, state=state_for_tickets(got), tickets=got):
                return
        if na == 0 and ta > 0:
            env.delete(track, a, reason="deletion")
        if nb == 0 and tb > 0:
            env.delete(track, b, reason="deletion")
        if na:
            env.set_tickets(track, a, na)
        if nb:
            env.set_tickets(track, b, nb)
        env.log("tickets", (a, b), track, {"before": [ta, tb], "after": [na, nb]})


PROTOCOLS = {
    "epidemic": Epidemic,
    "spray_and_wait": SprayAndWait,
    "local_mpar": LocalMPAR,
    "tabu_mpar": TabuMPAR,
    "none": Custody,
}
