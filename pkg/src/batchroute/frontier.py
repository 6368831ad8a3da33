"""Candidate states, dominance and per-query Pareto frontiers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .core import ModelPool, Query, State, amortized_state_cost, as_fraction, format_money
from .router import proxy_utility


@dataclass(frozen=True)
class FrontierEntry:
    state: State
    cost: Fraction
    utility: Fraction

    @classmethod
    def of(cls, state: State, cost, utility) -> "FrontierEntry":
        return cls(state, as_fraction(cost), as_fraction(utility))


@dataclass(frozen=True)
class Frontier:
    query_id: str
    entries: tuple[FrontierEntry, ...]

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, t: int) -> FrontierEntry:
        return self.entries[t]


def candidate_states(pool: ModelPool) -> list[State]:
    return [State(k, b) for k, m in enumerate(pool.models) for b in m.usable_batch_sizes]


def dominates(a: FrontierEntry, b: FrontierEntry) -> bool:
    """True when ``a`` is no more expensive and no less useful than ``b``."""
    return a.cost <= b.cost and a.utility >= b.utility


def _order_key(e: FrontierEntry):
    return (e.cost, -e.utility, e.state.model_index, -e.state.batch_size)


def pareto_frontier(query_id: str, entries: Iterable[FrontierEntry]) -> Frontier:
    """Keep the entries whose utility beats every cheaper (or equally cheap, preferred) entry."""
    ordered = sorted(entries, key=_order_key)
    if not ordered:
        raise ValueError(f"query {query_id}: no candidate states")
    kept = [ordered[0]]
    for e in ordered[1:]:
        if e.utility > kept[-1].utility:
            kept.append(e)
    return Frontier(query_id, tuple(kept))


def score_states(query: Query, states: Sequence[State], u1, pool: ModelPool) -> list[FrontierEntry]:
    """Amortized cost and proxy utility for each state; ``u1`` holds per-model unbatched estimates."""
    out = []
    for s in states:
        model = pool.models[s.model_index]
        u = proxy_utility(float(u1[s.model_index]), model.scaling, s.batch_size)
        out.append(FrontierEntry(s, amortized_state_cost(query, s, pool), as_fraction(u)))
    return out


def build_frontier(query: Query, states: Sequence[State], u1, pool: ModelPool) -> Frontier:
    if not states:
        raise ValueError(f"query {query.id}: empty state list")
    return pareto_frontier(query.id, score_states(query, states, u1, pool))


def build_frontiers(queries: Sequence[Query], states: Sequence[State], U1, pool: ModelPool) -> list[Frontier]:
    return [build_frontier(q, states, U1[i], pool) for i, q in enumerate(queries)]


def write_frontiers_csv(frontiers: Sequence[Frontier], path, pool: ModelPool | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "rank", "model", "batch", "cost", "utility"])
        for f in frontiers:
            for t, e in enumerate(f.entries):
                model = pool.models[e.state.model_index].id if pool else f"m{e.state.model_index + 1}"
                w.writerow([f.query_id, t, model, e.state.batch_size,
                            format_money(e.cost), repr(float(e.utility))])
