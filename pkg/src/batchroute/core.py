"""Domain types and cost arithmetic.

Money and utilities that feed the scheduler are exact rationals
(:class:`fractions.Fraction`) so that budget traces are reproducible bit for
bit and amortized shares such as ``C_sys / 3`` carry no rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .scaling import CONSTANT_ONE, ScalingFn

MONEY_PLACES = 12


def as_fraction(x) -> Fraction:
    """Exact rational for a money or utility value.

    Floats go through their shortest round-trip repr, so ``0.69`` becomes
    ``69/100`` rather than the binary approximation.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x!r}")
        return Fraction(repr(float(x)))
    if isinstance(x, Decimal):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x.strip())
    raise TypeError(f"cannot convert {type(x).__name__} to an exact amount")


def _is_finite_decimal(q: Fraction) -> bool:
    d = q.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    return d == 1


def format_money(x) -> str:
    """Decimal string for an amount; exact when the value has a finite expansion."""
    q = as_fraction(x)
    with localcontext() as ctx:
        ctx.prec = 60
        d = Decimal(q.numerator) / Decimal(q.denominator)
        if not _is_finite_decimal(q):
            d = d.quantize(Decimal(1).scaleb(-MONEY_PLACES))
        s = format(d.normalize(), "f")
    if "." not in s:
        s += ".0"
    return s


@dataclass(frozen=True)
class ModelSpec:
    id: str
    input_price: Fraction
    output_price: Fraction
    system_prompt_tokens: int = 0
    batch_grid: tuple[int, ...] = (1,)
    effective_batch_size: int = 1
    scaling: ScalingFn = CONSTANT_ONE

    def __post_init__(self):
        object.__setattr__(self, "input_price", as_fraction(self.input_price))
        object.__setattr__(self, "output_price", as_fraction(self.output_price))
        object.__setattr__(self, "batch_grid", tuple(int(b) for b in self.batch_grid))
        if self.input_price < 0 or self.output_price < 0:
            raise ValueError(f"model {self.id}: prices must be nonnegative")
        if self.system_prompt_tokens < 0:
            raise ValueError(f"model {self.id}: system_prompt_tokens must be >= 0")
        grid = self.batch_grid
        if not grid or grid[0] != 1:
            raise ValueError(f"model {self.id}: batch grid must start at 1")
        if any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
            raise ValueError(f"model {self.id}: batch grid must be strictly increasing")
        if self.effective_batch_size not in grid:
            raise ValueError(
                f"model {self.id}: effective batch size {self.effective_batch_size} "
                f"not in grid {list(grid)}"
            )

    @property
    def usable_batch_sizes(self) -> tuple[int, ...]:
        return tuple(b for b in self.batch_grid if b <= self.effective_batch_size)

    def calibrated(self, *, batch_grid, effective_batch_size, scaling) -> "ModelSpec":
        return replace(
            self,
            batch_grid=tuple(batch_grid),
            effective_batch_size=effective_batch_size,
            scaling=scaling,
        )


@dataclass(frozen=True)
class Query:
    id: str
    embedding: np.ndarray
    input_tokens: int
    expected_output_tokens: int
    truth_utilities: tuple[int, ...] | None = None
    # model id -> {batch size -> observed utility}; optional probe data
    batch_utilities: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=float)
        if emb.ndim != 1:
            raise ValueError(f"query {self.id}: embedding must be a vector")
        object.__setattr__(self, "embedding", emb)
        if self.input_tokens < 1:
            raise ValueError(f"query {self.id}: input_tokens must be >= 1")
        if self.expected_output_tokens < 1:
            raise ValueError(f"query {self.id}: expected_output_tokens must be >= 1")
        if self.truth_utilities is not None:
            tu = tuple(int(u) for u in self.truth_utilities)
            if any(u not in (0, 1) for u in tu):
                raise ValueError(f"query {self.id}: truth utilities must be 0/1")
            object.__setattr__(self, "truth_utilities", tu)


@dataclass(frozen=True, order=True)
class State:
    """A routing decision: 0-based model index and batch size."""

    model_index: int
    batch_size: int

    def __post_init__(self):
        if self.model_index < 0:
            raise ValueError("model index must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    def label(self, pool: "ModelPool | None" = None) -> str:
        name = pool.models[self.model_index].id if pool else f"m{self.model_index + 1}"
        return f"({name},{self.batch_size})"


@dataclass(frozen=True)
class ModelPool:
    models: tuple[ModelSpec, ...]

    def __post_init__(self):
        models = tuple(self.models)
        object.__setattr__(self, "models", models)
        if not models:
            raise ValueError("model pool is empty")
        ids = [m.id for m in models]
        if len(set(ids)) != len(ids):
            raise ValueError("model ids must be unique")
        for a, b in zip(models, models[1:]):
            if b.input_price < a.input_price or b.output_price < a.output_price:
                raise ValueError(
                    f"pool must be ordered by ascending input and output price: "
                    f"{a.id} precedes {b.id} but is more expensive"
                )

    def __len__(self):
        return len(self.models)

    def __getitem__(self, k: int) -> ModelSpec:
        return self.models[k]

    def index_of(self, model_id: str) -> int:
        for k, m in enumerate(self.models):
            if m.id == model_id:
                return k
        raise KeyError(f"unknown model {model_id!r}")

    def with_models(self, models: Iterable[ModelSpec]) -> "ModelPool":
        return ModelPool(tuple(models))

    def check_state(self, state: State) -> None:
        if state.model_index >= len(self.models):
            raise ValueError(f"state {state} references unknown model")
        m = self.models[state.model_index]
        if state.batch_size not in m.batch_grid:
            raise ValueError(f"batch size {state.batch_size} not in grid of {m.id}")
        if state.batch_size > m.effective_batch_size:
            raise ValueError(
                f"batch size {state.batch_size} exceeds effective batch size of {m.id}"
            )


def system_prompt_cost(model: ModelSpec) -> Fraction:
    return model.system_prompt_tokens * model.input_price


def query_cost(query: Query, model: ModelSpec) -> Fraction:
    if query.input_tokens < 1 or query.expected_output_tokens < 1:
        raise ValueError("token counts must be >= 1")
    return query.input_tokens * model.input_price + query.expected_output_tokens * model.output_price


def amortized_state_cost(query: Query, state: State, pool: ModelPool) -> Fraction:
    """Per-query share of an invocation: ``C_sys / b + C_q``."""
    model = pool.models[state.model_index]
    return system_prompt_cost(model) / state.batch_size + query_cost(query, model)


def batch_group_cost(model: ModelSpec, b: int, assigned_queries: Sequence[Query]) -> Fraction:
    """Cost of serving ``assigned_queries`` on ``model`` in batches of ``b``, partial batches included."""
    n = len(assigned_queries)
    if n == 0:
        return Fraction(0)
    invocations = -(-n // b)
    return invocations * system_prompt_cost(model) + sum(
        (query_cost(q, model) for q in assigned_queries), Fraction(0)
    )
