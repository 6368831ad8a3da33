"""Greedy budgeted upgrades along per-query frontiers, then packing into invocations."""

from __future__ import annotations

import contextlib
import csv
import gc
import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, NamedTuple, Sequence

from .core import ModelPool, Query, State, as_fraction, batch_group_cost, format_money
from .frontier import Frontier


class BudgetInfeasible(ValueError):
    def __init__(self, needed: Fraction, budget: Fraction):
        super().__init__(
            f"budget infeasible: initial assignment needs {format_money(needed)}, "
            f"budget is {format_money(budget)}"
        )
        self.needed = needed
        self.budget = budget


@dataclass(frozen=True)
class PQEntry:
    query_id: str
    state: State
    delta: float


class TraceStep(NamedTuple):
    """One committed upgrade. Amounts are kept as integers over shared denominators."""

    step: int
    query_id: str
    state: State
    delta: float
    increment_units: int
    budget_units: int
    utility_units: int
    cost_den: int
    util_den: int

    @property
    def increment(self) -> Fraction:
        return Fraction(self.increment_units, self.cost_den)

    @property
    def budget_after(self) -> Fraction:
        return Fraction(self.budget_units, self.cost_den)

    @property
    def utility_after(self) -> Fraction:
        return Fraction(self.utility_units, self.util_den)


@dataclass(frozen=True)
class Skip:
    query_id: str
    state: State
    reason: str


@dataclass(frozen=True)
class Snapshot:
    step: int
    budget: Fraction
    queue: tuple[PQEntry, ...]


@dataclass
class Assignment:
    query_ids: list[str]
    states: dict[str, State]
    positions: list[int]
    budget: Fraction
    initial_remaining: Fraction
    remaining_budget: Fraction
    total_proxy_utility: Fraction
    trace: list[TraceStep] = field(default_factory=list)
    skipped_upgrades: list[Skip] = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)

    @property
    def amortized_spend(self) -> Fraction:
        return self.budget - self.remaining_budget


@dataclass(frozen=True)
class InvocationBatch:
    model_index: int
    batch_size: int
    members: tuple[str, ...]


def delta_slope(frontier: Frontier, t: int) -> float:
    """Utility gained per unit of extra cost moving from entry ``t - 1`` to ``t``."""
    if not 1 <= t < len(frontier):
        raise IndexError(f"frontier step {t} out of range for length {len(frontier)}")
    return _slope(frontier.entries[t - 1], frontier.entries[t])


def _slope(lo, hi) -> float:
    gain = hi.utility - lo.utility
    inc = hi.cost - lo.cost
    # int true division is correctly rounded, so equal ratios give equal floats
    return (gain.numerator * inc.denominator) / (gain.denominator * inc.numerator)


def _to_units(rows):
    """Scale rows of Fractions to integers over their least common denominator."""
    dens = {v.denominator for row in rows for v in row}
    den = 1
    for d in dens:
        den = math.lcm(den, d)
    mult = {d: den // d for d in dens}
    return [[v.numerator * mult[v.denominator] for v in row] for row in rows], den


@contextlib.contextmanager
def _gc_paused():
    # the upgrade loop allocates many small acyclic objects; letting the cyclic
    # collector rescan the (large, live) frontier graph meanwhile makes runtime superlinear
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def greedy_schedule(frontiers: Sequence[Frontier], budget, *, record_snapshots: bool = False) -> Assignment:
    """Start every query at its cheapest frontier state and spend the rest on the steepest upgrades.

    Queue order is largest slope first, then lower workload position. An
    upgrade that no longer fits is dropped without re-queuing the query.
    """
    with _gc_paused():
        return _greedy(frontiers, as_fraction(budget), record_snapshots)


def _greedy(frontiers, budget: Fraction, record_snapshots: bool) -> Assignment:
    n = len(frontiers)
    # exact integer arithmetic on a common denominator per quantity
    costs, cden = _to_units([[budget]] + [[e.cost for e in f.entries] for f in frontiers])
    total = costs.pop(0)[0]
    utils, uden = _to_units([[e.utility for e in f.entries] for f in frontiers])
    scale_num, scale_den = cden, uden

    def slope(i, t):
        return ((utils[i][t] - utils[i][t - 1]) * scale_num) / ((costs[i][t] - costs[i][t - 1]) * scale_den)

    initial = sum(c[0] for c in costs)
    if initial > total:
        raise BudgetInfeasible(Fraction(initial, cden), budget)
    remaining = total - initial
    utility = sum(u[0] for u in utils)
    pos = [0] * n

    heap = [(-slope(i, 1), i, 1) for i in range(n) if len(costs[i]) > 1]
    heapq.heapify(heap)

    trace: list[TraceStep] = []
    skipped: list[Skip] = []
    snapshots: list[Snapshot] = []

    def snap(step):
        queue = tuple(PQEntry(frontiers[i].query_id, frontiers[i].entries[t].state, -d)
                      for d, i, t in sorted(heap))
        snapshots.append(Snapshot(step, Fraction(remaining, cden), queue))

    if record_snapshots:
        snap(0)
    step = 0
    while heap and remaining > 0:
        neg_delta, i, t = heapq.heappop(heap)
        c = costs[i]
        inc = c[t] - c[t - 1]
        if inc > remaining:
            skipped.append(Skip(frontiers[i].query_id, frontiers[i].entries[t].state, "unaffordable"))
            continue
        pos[i] = t
        remaining -= inc
        utility += utils[i][t] - utils[i][t - 1]
        step += 1
        trace.append(TraceStep(step, frontiers[i].query_id, frontiers[i].entries[t].state, -neg_delta,
                               inc, remaining, utility, cden, uden))
        if t + 1 < len(c):
            heapq.heappush(heap, (-slope(i, t + 1), i, t + 1))
        if record_snapshots:
            snap(step)

    ids = [f.query_id for f in frontiers]
    return Assignment(
        query_ids=ids,
        states={qid: frontiers[i].entries[pos[i]].state for i, qid in enumerate(ids)},
        positions=pos,
        budget=budget,
        initial_remaining=Fraction(total - initial, cden),
        remaining_budget=Fraction(remaining, cden),
        total_proxy_utility=Fraction(utility, uden),
        trace=trace,
        skipped_upgrades=skipped,
        snapshots=snapshots,
    )


def pack_batches(assignment: Assignment, pool: ModelPool | None = None) -> list[InvocationBatch]:
    """Group queries by state in workload order and cut each group into batches of its size."""
    groups: dict[State, list[str]] = defaultdict(list)
    for qid in assignment.query_ids:
        s = assignment.states[qid]
        if pool is not None:
            pool.check_state(s)
        groups[s].append(qid)
    batches = []
    for s in sorted(groups):
        members = groups[s]
        b = s.batch_size
        for j in range(0, len(members), b):
            batches.append(InvocationBatch(s.model_index, b, tuple(members[j:j + b])))
    return batches


def exact_spend(batches: Sequence[InvocationBatch], pool: ModelPool,
                queries: Mapping[str, Query]) -> Fraction:
    """Realized cost with one system prompt per physical invocation."""
    groups: dict[tuple[int, int], list[Query]] = defaultdict(list)
    for batch in batches:
        if len(batch.members) > batch.batch_size:
            raise ValueError("batch holds more queries than its size")
        groups[(batch.model_index, batch.batch_size)].extend(queries[q] for q in batch.members)
    return sum(
        (batch_group_cost(pool.models[k], b, qs) for (k, b), qs in groups.items()),
        Fraction(0),
    )


def state_name(state: State, models=None) -> str:
    """Model id for a state; ``models`` is a pool, a list of ids, or None for ``m1, m2, ...``."""
    if models is None:
        return f"m{state.model_index + 1}"
    if isinstance(models, ModelPool):
        return models.models[state.model_index].id
    return models[state.model_index]


def write_trace_csv(assignment: Assignment, path, pool=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "query", "model", "batch", "delta", "budget_after"])
        w.writerow([0, "", "", "", "", format_money(assignment.initial_remaining)])
        for s in assignment.trace:
            w.writerow([s.step, s.query_id, state_name(s.state, pool), s.state.batch_size,
                        f"{s.delta:.6f}", format_money(s.budget_after)])


def assignment_to_dict(assignment: Assignment, pool=None) -> dict:
    return {
        "budget": format_money(assignment.budget),
        "initial_remaining": format_money(assignment.initial_remaining),
        "remaining_budget": format_money(assignment.remaining_budget),
        "amortized_spend": format_money(assignment.amortized_spend),
        "total_proxy_utility": float(assignment.total_proxy_utility),
        "assignment": [
            {"query": qid, "model": state_name(assignment.states[qid], pool),
             "batch": assignment.states[qid].batch_size}
            for qid in assignment.query_ids
        ],
        "trace": [
            {"step": s.step, "query": s.query_id, "model": state_name(s.state, pool),
             "batch": s.state.batch_size, "delta": s.delta,
             "budget_after": format_money(s.budget_after)}
            for s in assignment.trace
        ],
        "skipped_upgrades": [
            {"query": k.query_id, "model": state_name(k.state, pool), "batch": k.state.batch_size,
             "reason": k.reason}
            for k in assignment.skipped_upgrades
        ],
    }


def batches_to_list(batches: Sequence[InvocationBatch], pool=None) -> list[dict]:
    return [
        {"model": state_name(State(b.model_index, b.batch_size), pool), "batch_size": b.batch_size,
         "members": list(b.members)}
        for b in batches
    ]
