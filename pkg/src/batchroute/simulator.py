"""Synthetic LLM pool with a planted utility tensor, used in place of real model calls."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .calibration import CalibrationProfile, ProbeResult, calibrate_pool
from .core import (ModelPool, ModelSpec, Query, State, amortized_state_cost, as_fraction,
                   batch_group_cost, format_money)
from .frontier import Frontier, FrontierEntry, build_frontier, pareto_frontier
from .oracle import DEFAULT_CAP, exact_solve, instance_from_frontiers
from .router import Router, train_router
from .scheduler import Assignment, InvocationBatch, exact_spend, greedy_schedule, pack_batches


@dataclass(frozen=True)
class SyntheticModel:
    id: str
    input_price: Fraction
    output_price: Fraction
    system_prompt_tokens: int
    alpha: float = 0.0
    beta: float = 1.0
    competence: float = 1.0

    def survival(self, b: int) -> float:
        return float(min(1.0, max(0.0, 1.0 - self.alpha * (b - 1) ** self.beta)))


@dataclass(frozen=True)
class SyntheticPoolSpec:
    models: tuple[SyntheticModel, ...]
    n_train: int = 512
    n_test: int = 256
    dim: int = 16
    clusters: int = 4
    difficulty_gradient: float = 0.5
    seed: int = 0
    max_batch: int = 64
    input_tokens: tuple[int, int] = (40, 120)
    output_tokens: tuple[int, int] = (1, 8)
    cluster_spread: float = 0.3

    def __post_init__(self):
        if not self.models:
            raise ValueError("spec needs at least one model")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("n_train must be >= 1 and n_test >= 0")
        if self.dim < 1 or self.clusters < 1:
            raise ValueError("dim and clusters must be positive")
        if not 0.0 <= self.difficulty_gradient <= 1.0:
            raise ValueError("difficulty_gradient must lie in [0, 1]")
        if self.max_batch < 1:
            raise ValueError("max_batch must be positive")
        for m in self.models:
            if not 0.0 <= m.competence <= 1.0:
                raise ValueError(f"model {m.id}: competence outside [0, 1]")
            if m.alpha < 0 or m.beta <= 0:
                raise ValueError(f"model {m.id}: decay needs alpha >= 0 and beta > 0")
        lo, hi = self.input_tokens
        if not 1 <= lo <= hi:
            raise ValueError("bad input token range")
        lo, hi = self.output_tokens
        if not 1 <= lo <= hi:
            raise ValueError("bad output token range")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticPoolSpec":
        models = tuple(
            SyntheticModel(m["id"], as_fraction(m["input_price"]), as_fraction(m["output_price"]),
                           int(m["system_prompt_tokens"]), float(m.get("alpha", 0.0)),
                           float(m.get("beta", 1.0)), float(m.get("competence", 1.0)))
            for m in d["models"]
        )
        kw = {k: d[k] for k in ("n_train", "n_test", "dim", "clusters", "difficulty_gradient",
                                "seed", "max_batch", "cluster_spread") if k in d}
        for k in ("input_tokens", "output_tokens"):
            if k in d:
                kw[k] = tuple(d[k])
        return cls(models=models, **kw)


def sim_grid(max_batch: int) -> tuple[int, ...]:
    return (1,) + tuple(range(4, max_batch + 1, 4))


@dataclass
class World:
    spec: SyntheticPoolSpec
    pool: ModelPool
    queries: list[Query]
    truth: np.ndarray  # n x K x len(grid), 0/1
    grid: tuple[int, ...]
    difficulty: np.ndarray
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.index = {q.id: i for i, q in enumerate(self.queries)}
        self._grid_pos = {b: g for g, b in enumerate(self.grid)}

    @property
    def train(self) -> list[Query]:
        return self.queries[: self.spec.n_train]

    @property
    def test(self) -> list[Query]:
        return self.queries[self.spec.n_train:]

    def utility(self, qid: str, state: State) -> int:
        g = self._grid_pos.get(state.batch_size)
        if g is None:
            raise ValueError(f"batch size {state.batch_size} not simulated")
        return int(self.truth[self.index[qid], state.model_index, g])

    def probe(self, model_index: int, batch_size: int, coreset: Sequence[Query]) -> ProbeResult:
        """Planted utilities of the coreset at ``batch_size`` and the cost of sequential batches."""
        if not 0 <= model_index < len(self.pool):
            raise ValueError(f"unknown model index {model_index}")
        g = self._grid_pos.get(batch_size)
        if g is None:
            raise ValueError(f"batch size {batch_size} not simulated")
        rows = [self.index[q.id] for q in coreset]
        utils = self.truth[rows, model_index, g].astype(float)
        cost = batch_group_cost(self.pool.models[model_index], batch_size, coreset)
        return ProbeResult(utils, cost)


def gen_workload(spec: SyntheticPoolSpec) -> World:
    """Draw queries, token counts and the full utility tensor from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_train + spec.n_test
    K = len(spec.models)
    grid = sim_grid(spec.max_batch)

    centers = rng.normal(size=(spec.clusters, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    cluster = rng.integers(0, spec.clusters, size=n)
    emb = centers[cluster] + spec.cluster_spread * rng.normal(size=(n, spec.dim)) / np.sqrt(spec.dim)
    if spec.clusters > 1:
        difficulty = spec.difficulty_gradient * cluster / (spec.clusters - 1)
    else:
        difficulty = np.zeros(n)
    t_in = rng.integers(spec.input_tokens[0], spec.input_tokens[1] + 1, size=n)
    t_out = rng.integers(spec.output_tokens[0], spec.output_tokens[1] + 1, size=n)

    competence = np.array([m.competence for m in spec.models])
    p1 = competence[None, :] * (1.0 - difficulty[:, None])
    u1 = (rng.random((n, K)) < p1).astype(np.int8)
    surv = np.array([[m.survival(b) for b in grid] for m in spec.models])  # K x G
    draws = rng.random((n, K, len(grid)))
    truth = (u1[:, :, None] & (draws < surv[None, :, :])).astype(np.int8)
    truth[:, :, 0] = u1

    pool = ModelPool(tuple(
        ModelSpec(m.id, m.input_price, m.output_price, m.system_prompt_tokens) for m in spec.models
    ))
    queries = []
    for i in range(n):
        prefix = "train" if i < spec.n_train else "test"
        queries.append(Query(f"{prefix}{i}", emb[i], int(t_in[i]), int(t_out[i]),
                             tuple(int(x) for x in u1[i])))
    return World(spec, pool, queries, truth, grid, difficulty)


@dataclass(frozen=True)
class EvalPoint:
    strategy: str
    budget: Fraction
    cost: Fraction
    utility: float
    proxy_utility: float
    amortized_cost: Fraction = Fraction(0)


def replay(assignment: Assignment, batches: Sequence[InvocationBatch], world: World,
           strategy: str = "") -> EvalPoint:
    """Realized utility from the planted tensor and realized spend with partial batches."""
    seen = set()
    for batch in batches:
        for qid in batch.members:
            s = assignment.states.get(qid)
            if s is None or s != State(batch.model_index, batch.batch_size):
                raise ValueError(f"batch member {qid} disagrees with the assignment")
            if qid in seen:
                raise ValueError(f"query {qid} packed twice")
            seen.add(qid)
    if seen != set(assignment.states):
        raise ValueError("batches do not cover the assignment")
    utility = sum(world.utility(qid, s) for qid, s in assignment.states.items())
    by_id = {qid: world.queries[world.index[qid]] for qid in seen}
    cost = exact_spend(batches, world.pool, by_id)
    return EvalPoint(strategy, assignment.budget, cost, float(utility),
                     float(assignment.total_proxy_utility), assignment.amortized_spend)


STRATEGY_RE = re.compile(r"^(robatch|router_only|batch_only\((\d+)\)|fixed_batch\((\d+)\))$")


def strategy_states(strategy: str, pool: ModelPool) -> tuple[list[State], bool]:
    """Candidate states for a strategy and whether batch decay enters its utility estimate."""
    m = STRATEGY_RE.match(strategy)
    if not m:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "robatch":
        return [State(k, b) for k, mm in enumerate(pool.models) for b in mm.usable_batch_sizes], True
    if strategy == "router_only":
        return [State(k, 1) for k in range(len(pool))], True
    if m.group(2) is not None:
        k = int(m.group(2))
        if not 0 <= k < len(pool):
            raise ValueError(f"batch_only model index {k} out of range")
        return [State(k, b) for b in pool.models[k].usable_batch_sizes], True
    b = int(m.group(3))
    return [State(k, b) for k in range(len(pool))], False


@dataclass
class Pipeline:
    world: World
    profile: CalibrationProfile
    router: Router
    pool: ModelPool  # calibrated
    u1: np.ndarray  # test queries x K


def prepare(world: World, *, profile: CalibrationProfile | None = None, router: Router | None = None,
            epsilon: float = 0.01, coreset_size: int = 256, k_neighbors: int = 5,
            exhaustive: bool = False) -> Pipeline:
    if profile is None:
        profile = calibrate_pool(world.pool, world.train, world.probe, epsilon=epsilon,
                                 coreset_size=coreset_size, grid_cap=world.grid[-1],
                                 exhaustive=exhaustive)
    if router is None:
        router = train_router(world.train, k_neighbors)
    test = world.test
    u1 = router.predict(np.stack([q.embedding for q in test])) if test else np.zeros((0, len(world.pool)))
    return Pipeline(world, profile, router, profile.apply(world.pool), u1)


def strategy_frontiers(pipe: Pipeline, strategy: str) -> list[Frontier]:
    states, decay = strategy_states(strategy, pipe.pool)
    frontiers = []
    for i, q in enumerate(pipe.world.test):
        if decay:
            frontiers.append(build_frontier(q, states, pipe.u1[i], pipe.pool))
        else:
            # batch-unaware baseline: the router's unbatched estimate at every batch size
            entries = [FrontierEntry(s, amortized_state_cost(q, s, pipe.pool),
                                     as_fraction(float(pipe.u1[i][s.model_index])))
                       for s in states]
            frontiers.append(pareto_frontier(q.id, entries))
    return frontiers


def assignment_from_choice(frontiers: Sequence[Frontier], choice: Sequence[int], budget) -> Assignment:
    budget = as_fraction(budget)
    states = {f.query_id: f.entries[c].state for f, c in zip(frontiers, choice)}
    spend = sum((f.entries[c].cost for f, c in zip(frontiers, choice)), Fraction(0))
    util = sum((f.entries[c].utility for f, c in zip(frontiers, choice)), Fraction(0))
    initial = sum((f.entries[0].cost for f in frontiers), Fraction(0))
    return Assignment([f.query_id for f in frontiers], states, list(choice), budget,
                      budget - initial, budget - spend, util)


def run_strategy(strategy: str, pipe: Pipeline, budget, *, oracle: bool = False,
                 oracle_cap: int = DEFAULT_CAP) -> EvalPoint:
    """Schedule the test workload under ``strategy`` and replay it against the planted tensor."""
    frontiers = strategy_frontiers(pipe, strategy)
    if oracle:
        sol = exact_solve(instance_from_frontiers(frontiers, budget), oracle_cap)
        assignment = assignment_from_choice(frontiers, sol.choice, budget)
    else:
        assignment = greedy_schedule(frontiers, budget)
    batches = pack_batches(assignment)
    return replay(assignment, batches, pipe.world, strategy)


def write_eval_csv(points: Sequence[EvalPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "budget", "cost", "amortized_cost", "utility", "proxy_utility"])
        for p in points:
            w.writerow([p.strategy, format_money(p.budget), format_money(p.cost),
                        format_money(p.amortized_cost), f"{p.utility:.6f}", f"{p.proxy_utility:.6f}"])
