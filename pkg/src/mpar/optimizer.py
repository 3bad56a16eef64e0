"""Search for the optimal relay set over the {0,1}^n hypercube.

Every search maximizes an evaluation callable ``p(x) -> float`` over bit
tuples; :class:`mpar.prob.CoDelivery` is the usual one. Ties are always broken
toward the lowest flip index so runs are reproducible.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .prob import probability_from_evaluation

Vector = tuple
Evaluation = Callable[[Vector], float]

BRUTE_FORCE_CAP = 20
TIE_TOLERANCE = 1e-12


class CapacityError(ValueError):
    """Exhaustive search requested on an instance that is too large."""


def flip(x: Sequence[int], i: int) -> Vector:
    y = list(x)
    y[i] = 1 - y[i]
    return tuple(y)


def neighborhood(x: Sequence[int]) -> list[Vector]:
    """All Hamming-1 neighbors of ``x`` in ascending flip-index order."""
    return [flip(x, i) for i in range(len(x))]


def unit_vector(n: int, index: int) -> Vector:
    return tuple(int(i == index) for i in range(n))


def _cached(score: Evaluation) -> Evaluation:
    memo: dict = {}

    def inner(x):
        x = tuple(x)
        v = memo.get(x)
        if v is None:
            v = memo[x] = float(score(x))
        return v

    return inner


def brute_force_opt(score: Evaluation, n: int) -> Vector:
    """Exact optimum by enumeration.

    Returns the maximizer of the delivery probability; near-ties go to the
    smallest cardinality, then to the lexicographically smallest vector.
    """
    if n > BRUTE_FORCE_CAP:
        raise CapacityError(f"brute force is capped at {BRUTE_FORCE_CAP} candidates, got {n}")
    best, best_key = None, None
    best_prob = -1.0
    for x in itertools.product((0, 1), repeat=n):
        prob = probability_from_evaluation(score(x))
        if best is None or prob > best_prob + TIE_TOLERANCE:
            best, best_prob, best_key = x, prob, (sum(x), x)
        elif abs(prob - best_prob) <= TIE_TOLERANCE and (sum(x), x) < best_key:
            best, best_key = x, (sum(x), x)
            best_prob = max(best_prob, prob)
    return best


@dataclass
class Candidate:
    flip: int
    x: Vector
    p: float
    tabu: bool = False
    choosable: bool = True

    @property
    def probability(self) -> float:
        return probability_from_evaluation(self.p)


@dataclass
class TraceStep:
    step: int
    x_now: Vector
    p_now: float
    x_best: Vector
    p_best: float
    table: tuple
    candidates: list
    chosen: int | None = None
    length: int | None = None

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["P_now"] = probability_from_evaluation(self.p_now)
        doc["P_best"] = probability_from_evaluation(self.p_best)
        for cand in doc["candidates"]:
            cand["P"] = probability_from_evaluation(cand["p"])
            cand["status"] = "choosable" if cand["choosable"] else "tabu"
        return doc


@dataclass
class SearchTrace:
    steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, i):
        return self.steps[i]

    def to_json(self) -> list:
        return [s.to_json() for s in self.steps]


def local_search(start: Sequence[int], score: Evaluation) -> tuple[Vector, SearchTrace]:
    """Steepest ascent over 1-flip moves; stops at a 1-flip local optimum."""
    score = _cached(score)
    x = tuple(start)
    trace = SearchTrace()
    n = len(x)
    while True:
        px = score(x)
        cands = [Candidate(i, y, score(y)) for i, y in enumerate(neighborhood(x))]
        step = TraceStep(len(trace) + 1, x, px, x, px, (0,) * n, cands)
        trace.steps.append(step)
        best = max(cands, key=lambda c: (c.p, -c.flip), default=None)
        if best is None or not best.p > px:
            return x, trace
        step.chosen = best.flip
        x = best.x


@dataclass
class TabuParams:
    """Tabu search settings; ``None`` fields are resolved from the size n.

    theta   -- stop after this many steps without improving the best value
               (default max(3, 2n))
    sigma   -- std-dev of the tabu length draw (default sqrt(n)/4)
    fixed_length -- use this constant tabu length instead of random draws
    """

    theta: int | None = None
    sigma: float | None = None
    fixed_length: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.theta is not None and self.theta < 1:
            raise ValueError("theta must be >= 1")
        if self.fixed_length is not None and self.fixed_length < 1:
            raise ValueError("fixed tabu length must be >= 1")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def theta_for(self, n: int) -> int:
        return self.theta if self.theta is not None else max(3, 2 * n)

    def sigma_for(self, n: int) -> float:
        return self.sigma if self.sigma is not None else math.sqrt(n) / 4


def sample_tabu_length(p_old: float, p_new: float, n: int, params: TabuParams,
                       rng: np.random.Generator) -> int:
    if params.fixed_length is not None:
        return params.fixed_length
    root = math.sqrt(n)
    mu = root * (1.0 + p_new - p_old) if p_new > p_old else root
    sigma = params.sigma_for(n)
    draw = rng.normal(mu, sigma) if sigma > 0 else mu
    return max(1, math.floor(draw))


def update_tabu_table(table: Sequence[int], flipped: int | None, length: int) -> tuple:
    """Decrement live counters and stamp the flipped position with ``length``.

    ``flipped=None`` is a null move: counters decay and nothing is stamped.
    """
    out = [t - 1 if t > 0 else 0 for t in table]
    if flipped is not None:
        out[flipped] = length
    return tuple(out)


def tabu_search(start: Sequence[int], score: Evaluation, params: TabuParams | None = None,
                rng: np.random.Generator | None = None) -> tuple[Vector, SearchTrace]:
    params = params or TabuParams()
    score = _cached(score)
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    x_now = tuple(start)
    n = len(x_now)
    theta = params.theta_for(n)
    x_best, p_best = x_now, score(x_now)
    table = (0,) * n
    stale = 0
    trace = SearchTrace()
    while stale < theta:
        p_now = score(x_now)
        cands = []
        for i, y in enumerate(neighborhood(x_now)):
            py = score(y)
            tabu = table[i] > 0
            cands.append(Candidate(i, y, py, tabu, (not tabu) or py > p_best))
        step = TraceStep(len(trace) + 1, x_now, p_now, x_best, p_best, table, cands)
        trace.steps.append(step)
        pool = [c for c in cands if c.choosable]
        if pool:
            pick = max(pool, key=lambda c: (c.p, -c.flip))
            length = sample_tabu_length(p_now, pick.p, n, params, rng)
            table = update_tabu_table(table, pick.flip, length)
            x_now = pick.x
            step.chosen, step.length = pick.flip, length
            if pick.p > p_best:
                x_best, p_best = x_now, pick.p
                stale = 0
                continue
        else:
            table = update_tabu_table(table, None, 0)
        stale += 1
    return x_best, trace


def tabu_search_restarts(start: Sequence[int], score: Evaluation, params: TabuParams | None = None,
                         restarts: int = 1) -> tuple[Vector, SearchTrace]:
    """Best of ``restarts`` tabu runs: the first from ``start``, the rest from random vectors.

    All runs share one generator seeded from ``params.seed``.
    """
    params = params or TabuParams()
    score = _cached(score)
    rng = np.random.default_rng(params.seed)
    best, best_trace = tabu_search(start, score, params, rng)
    for _ in range(restarts - 1):
        origin = tuple(int(b) for b in rng.integers(0, 2, size=len(best)))
        x, trace = tabu_search(origin, score, params, rng)
        if score(x) > score(best) or (score(x) == score(best) and (sum(x), x) < (sum(best), best)):
            best, best_trace = x, trace
    return best, best_trace
