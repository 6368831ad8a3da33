"""Exhaustive solver for small routing instances and the max-coverage construction."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .core import State, as_fraction
from .frontier import Frontier

AMORTIZED = "amortized"
EXACT_BATCHED = "exact_batched"
DEFAULT_CAP = 5_000_000


class OracleCapExceeded(RuntimeError):
    pass


class Infeasible(ValueError):
    pass


@dataclass(frozen=True)
class ExactOption:
    """One candidate state for a query.

    In amortized mode only ``cost`` matters. In exact mode the per-invocation
    ``sys_cost`` of the state's model and the query's own ``query_cost`` are
    used with one system prompt per started batch.
    """

    state: State
    utility: Fraction
    cost: Fraction = Fraction(0)
    sys_cost: Fraction = Fraction(0)
    query_cost: Fraction = Fraction(0)

    @classmethod
    def of(cls, state, utility, cost=None, sys_cost=0, query_cost=0) -> "ExactOption":
        sys_cost, query_cost = as_fraction(sys_cost), as_fraction(query_cost)
        if cost is None:
            cost = sys_cost / state.batch_size + query_cost
        return cls(state, as_fraction(utility), as_fraction(cost), sys_cost, query_cost)


@dataclass(frozen=True)
class ExactInstance:
    options: tuple[tuple[ExactOption, ...], ...]
    budget: Fraction
    cost_mode: str = AMORTIZED

    def __post_init__(self):
        if self.cost_mode not in (AMORTIZED, EXACT_BATCHED):
            raise ValueError(f"unknown cost mode {self.cost_mode!r}")
        if any(len(o) == 0 for o in self.options):
            raise ValueError("every query needs at least one state")
        object.__setattr__(self, "budget", as_fraction(self.budget) if not _is_inf(self.budget)
                           else self.budget)

    @property
    def size(self) -> int:
        return math.prod(len(o) for o in self.options)


def _is_inf(x) -> bool:
    return isinstance(x, float) and math.isinf(x)


@dataclass(frozen=True)
class ExactSolution:
    utility: Fraction
    choice: tuple[int, ...]
    cost: Fraction

    def states(self, instance: ExactInstance) -> list[State]:
        return [instance.options[i][c].state for i, c in enumerate(self.choice)]


def instance_from_frontiers(frontiers: Sequence[Frontier], budget) -> ExactInstance:
    return ExactInstance(
        tuple(tuple(ExactOption(e.state, e.utility, e.cost) for e in f.entries) for f in frontiers),
        budget if _is_inf(budget) else as_fraction(budget),
    )


def exact_solve(instance: ExactInstance, cap: int = DEFAULT_CAP) -> ExactSolution:
    """Best total utility over all assignments within budget.

    Depth-first in query-major mixed-radix order with budget and bound
    pruning; among optimal assignments the lexicographically smallest choice
    vector is returned.
    """
    if instance.size > cap:
        raise OracleCapExceeded(f"{instance.size} assignments exceeds cap {cap}")
    opts = instance.options
    n = len(opts)
    budget = instance.budget
    exact = instance.cost_mode == EXACT_BATCHED

    best_util = [max(o.utility for o in q) for q in opts]
    suffix_util = list(itertools.accumulate(reversed(best_util), initial=Fraction(0)))[::-1]
    if exact:
        min_inc = [min(o.query_cost for o in q) for q in opts]
    else:
        min_inc = [min(o.cost for o in q) for q in opts]
    suffix_cost = list(itertools.accumulate(reversed(min_inc), initial=Fraction(0)))[::-1]

    best: list = [None, None, None]  # utility, choice, cost
    choice = [0] * n
    counts: dict = {}

    def visit(i: int, cost: Fraction, util: Fraction):
        if i == n:
            if best[0] is None or util > best[0]:
                best[0], best[1], best[2] = util, tuple(choice), cost
            return
        for c, o in enumerate(opts[i]):
            if exact:
                key = (o.state.model_index, o.state.batch_size)
                k = counts.get(key, 0)
                inc = o.query_cost + (o.sys_cost if k % o.state.batch_size == 0 else 0)
            else:
                inc = o.cost
            new_cost = cost + inc
            if new_cost + suffix_cost[i + 1] > budget:
                continue
            new_util = util + o.utility
            if best[0] is not None and new_util + suffix_util[i + 1] <= best[0]:
                continue
            choice[i] = c
            if exact:
                counts[key] = k + 1
            visit(i + 1, new_cost, new_util)
            if exact:
                counts[key] = k

    visit(0, Fraction(0), Fraction(0))
    if best[0] is None:
        raise Infeasible("no assignment fits the budget")
    return ExactSolution(best[0], best[1], best[2])


def assignment_cost(instance: ExactInstance, choice: Sequence[int]) -> Fraction:
    chosen = [instance.options[i][c] for i, c in enumerate(choice)]
    if instance.cost_mode == AMORTIZED:
        return sum((o.cost for o in chosen), Fraction(0))
    groups: dict = {}
    total = Fraction(0)
    for o in chosen:
        key = (o.state.model_index, o.state.batch_size)
        groups.setdefault(key, []).append(o)
        total += o.query_cost
    for (_, b), members in groups.items():
        total += -(-len(members) // b) * members[0].sys_cost
    return total


@dataclass(frozen=True)
class MCInstance:
    n: int
    sets: tuple[tuple[int, ...], ...]
    budget: int

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(tuple(sorted(set(s))) for s in self.sets))
        if self.budget < 0 or self.budget > len(self.sets):
            raise ValueError("budget must lie in [0, K]")
        covered = set().union(*self.sets) if self.sets else set()
        if covered != set(range(self.n)):
            raise ValueError("every element 0..n-1 must appear in some set and nothing else")


def reduce_max_coverage(mc: MCInstance) -> ExactInstance:
    """Routing instance whose optimum equals the max-coverage optimum.

    One query per element, one model per set, a single batch size ``n``,
    unit system prompt cost, free queries, utility 1 iff the element lies in
    the set, and budget ``B``.
    """
    n = mc.n
    options = tuple(
        tuple(
            ExactOption.of(State(k, n), 1 if i in members else 0, sys_cost=1, query_cost=0)
            for k, members in enumerate(mc.sets)
        )
        for i in range(n)
    )
    return ExactInstance(options, Fraction(mc.budget), EXACT_BATCHED)


def brute_force_max_coverage(mc: MCInstance, max_sets: int = 20) -> int:
    K = len(mc.sets)
    if K > max_sets:
        raise OracleCapExceeded(f"{K} sets exceeds brute-force limit {max_sets}")
    best = 0
    for r in range(min(mc.budget, K) + 1):
        for combo in itertools.combinations(range(K), r):
            covered = set().union(*(mc.sets[k] for k in combo)) if combo else set()
            best = max(best, len(covered))
    return best
