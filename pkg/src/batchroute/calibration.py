"""Offline modeling: coreset, batch-size bounds, RCU profiling and scaling fits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.optimize import least_squares

from .core import ModelPool, ModelSpec, Query, as_fraction, query_cost, system_prompt_cost
from .scaling import CONSTANT, PIECEWISE_LINEAR, POWER_LAW, ScalingFn

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.01
DEFAULT_CORESET_SIZE = 256
GRID_STEP = 4


class UtilityCollapse(ArithmeticError):
    """Mean utility at a batch size is zero, so its RCU is unbounded."""

    def __init__(self, b):
        super().__init__(f"utility collapse at batch size {b}")
        self.batch_size = b


@dataclass
class ProbeResult:
    utilities: np.ndarray
    cost: Fraction


class BatchUtilityProbe(Protocol):
    def __call__(self, model_index: int, batch_size: int, coreset: Sequence[Query]) -> ProbeResult:
        ...


def k_center_coreset(embeddings, m: int) -> list[int]:
    """Greedy k-center selection of ``m`` row indices under Euclidean distance.

    The first center is the point farthest from the centroid; every later
    center is the point farthest from its nearest chosen center. Ties go to
    the lowest index.
    """
    X = np.asarray(embeddings, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a nonempty 2-D embedding matrix")
    n = X.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"coreset size {m} out of range [1, {n}]")

    centroid = X.mean(axis=0)
    first = int(np.argmax(np.linalg.norm(X - centroid, axis=1)))
    chosen = [first]
    mins = np.linalg.norm(X - X[first], axis=1)
    mins[first] = -1.0
    for _ in range(m - 1):
        nxt = int(np.argmax(mins))
        chosen.append(nxt)
        mins = np.minimum(mins, np.linalg.norm(X - X[nxt], axis=1))
        mins[chosen] = -1.0
    return chosen


def covering_radius(embeddings, centers: Sequence[int]) -> float:
    X = np.asarray(embeddings, dtype=float)
    C = X[list(centers)]
    d = np.linalg.norm(X[:, None, :] - C[None, :, :], axis=2)
    return float(d.min(axis=1).max())


def max_batch_size(model: ModelSpec, expected_query_cost, epsilon: float) -> int:
    """Largest batch size keeping the system prompt's share of batch cost at least ``epsilon``."""
    eps = as_fraction(epsilon)
    if not 0 < eps < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    ecq = as_fraction(expected_query_cost)
    if ecq <= 0:
        raise ValueError("expected query cost must be positive")
    bound = system_prompt_cost(model) * (1 - eps) / (eps * ecq)
    return max(1, math.ceil(bound))


def rcu(model: ModelSpec, b: int, mean_query_cost, mean_utility: float) -> float:
    """Expected cost of one batch of ``b`` queries per unit of the utility that batch yields.

    The batch yields ``b * mean_utility``, so with constant utility the value
    falls as the system prompt is shared by more queries.
    """
    if b < 1:
        raise ValueError("batch size must be >= 1")
    if mean_utility <= 0:
        raise UtilityCollapse(b)
    batch_cost = system_prompt_cost(model) + b * as_fraction(mean_query_cost)
    return float(batch_cost) / (b * float(mean_utility))


def candidate_grid(b_max: int, cap: int | None = None) -> list[int]:
    top = b_max if cap is None else min(b_max, cap)
    return [1] + list(range(GRID_STEP, top + 1, GRID_STEP))


def ternary_argmin(values: Callable[[int], float], n: int) -> int:
    """Index minimizing ``values`` over ``range(n)``, assuming a V-shaped sequence.

    Falls back to a linear scan once at most four candidates remain. On a
    sequence that is not unimodal this returns some local minimum.
    """
    lo, hi = 0, n - 1
    while hi - lo + 1 > 4:
        third = (hi - lo) // 3
        m1, m2 = lo + third, hi - third
        f1, f2 = values(m1), values(m2)
        if f1 < f2:
            hi = m2 - 1
        elif f1 > f2:
            lo = m1 + 1
        elif math.isinf(f1):
            hi = m1
        else:
            lo, hi = m1, m2
    return min(range(lo, hi + 1), key=lambda i: (values(i), i))


@dataclass
class RcuSample:
    batch_size: int
    mean_utility: float
    rcu: float  # inf on utility collapse


def calibrate_effective_batch(
    model: ModelSpec,
    coreset: Sequence[Query],
    probe: BatchUtilityProbe,
    epsilon: float = DEFAULT_EPSILON,
    *,
    model_index: int = 0,
    b_max: int | None = None,
    grid_cap: int | None = None,
    exhaustive: bool = False,
) -> tuple[int, list[RcuSample]]:
    """Search the candidate grid for the batch size with the lowest RCU.

    Returns the chosen batch size and every sample evaluated, sorted by batch size.
    """
    if not coreset:
        raise ValueError("coreset is empty")
    mean_cost = sum((query_cost(q, model) for q in coreset), Fraction(0)) / len(coreset)
    if b_max is None:
        b_max = max_batch_size(model, mean_cost, epsilon)
    grid = candidate_grid(b_max, grid_cap)
    samples: dict[int, RcuSample] = {}

    def value(i: int) -> float:
        b = grid[i]
        if b not in samples:
            res = probe(model_index, b, coreset)
            mu = float(np.mean(res.utilities))
            try:
                r = rcu(model, b, mean_cost, mu)
            except UtilityCollapse:
                r = math.inf
            samples[b] = RcuSample(b, mu, r)
        return samples[b].rcu

    if exhaustive:
        best = min(range(len(grid)), key=lambda i: (value(i), i))
    else:
        best = ternary_argmin(value, len(grid))
    return grid[best], [samples[b] for b in sorted(samples)]


def fit_scaling_piecewise(samples: Sequence[tuple[int, float]]) -> ScalingFn:
    """Piecewise-linear ratio ``u(b) / u(1)`` through the sampled batch sizes."""
    samples = sorted((int(b), float(u)) for b, u in samples)
    if not samples or samples[0][0] != 1:
        raise ValueError("samples must include batch size 1")
    bs = [b for b, _ in samples]
    if len(set(bs)) != len(bs):
        raise ValueError("duplicate batch sizes in samples")
    u1 = samples[0][1]
    if u1 <= 0:
        raise ValueError("unbatched utility must be positive to normalise")
    knots = tuple((b, 1.0 if b == 1 else u / u1) for b, u in samples)
    return ScalingFn(PIECEWISE_LINEAR, knots=knots)


def fit_scaling_power_law(samples: Sequence[tuple[int, float]]) -> ScalingFn:
    """Fit ``1 - alpha * (b - 1) ** beta`` to the ratios ``u(b) / u(1)``.

    Ratios at or below zero are treated as saturated: they are left out of the
    log-linear starting estimate but kept, against the clamped model, in the
    least-squares refinement.
    """
    samples = sorted((int(b), float(u)) for b, u in samples)
    if len(samples) < 3 or samples[0][0] != 1:
        raise ValueError("power-law fit needs at least 3 samples including b=1")
    u1 = samples[0][1]
    if u1 <= 0:
        raise ValueError("unbatched utility must be positive to normalise")
    b = np.array([s[0] for s in samples[1:]], dtype=float)
    r = np.array([s[1] for s in samples[1:]]) / u1
    if np.all(r == 1.0):
        return ScalingFn(CONSTANT, alpha=0.0, beta=1.0)

    x = np.log(b - 1)
    inner = (r > 0) & (r < 1)
    if inner.sum() >= 2:
        beta0, log_alpha0 = np.polyfit(x[inner], np.log(1 - r[inner]), 1)
        alpha0 = float(np.exp(log_alpha0))
    elif inner.sum() == 1:
        beta0 = 1.0
        alpha0 = float((1 - r[inner][0]) / (b[inner][0] - 1))
    else:
        beta0, alpha0 = 1.0, max(float(np.mean(1 - r)), 1e-6)
    beta0 = float(max(beta0, 1e-6))

    def resid(p):
        return np.clip(1 - p[0] * (b - 1) ** p[1], 0.0, 1.0) - np.clip(r, 0.0, 1.0)

    fit = least_squares(resid, [alpha0, beta0], bounds=([0.0, 1e-6], [np.inf, np.inf]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    alpha, beta = (float(v) for v in fit.x)
    if np.sum(resid([alpha0, beta0]) ** 2) <= np.sum(fit.fun ** 2):
        alpha, beta = alpha0, beta0
    return ScalingFn(POWER_LAW, alpha=alpha, beta=beta)


@dataclass
class ModelCalibration:
    model_id: str
    b_max: int
    grid: list[int]
    effective_batch_size: int
    scaling: ScalingFn
    epsilon: float
    rcu_samples: list[RcuSample] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.model_id,
            "b_max": self.b_max,
            "grid": list(self.grid),
            "effective_batch_size": self.effective_batch_size,
            "epsilon": self.epsilon,
            "scaling": self.scaling.to_dict(),
            "rcu_samples": [
                {
                    "batch_size": s.batch_size,
                    "mean_utility": s.mean_utility,
                    "rcu": None if math.isinf(s.rcu) else s.rcu,
                }
                for s in self.rcu_samples
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelCalibration":
        return cls(
            model_id=d["id"],
            b_max=int(d["b_max"]),
            grid=[int(b) for b in d["grid"]],
            effective_batch_size=int(d["effective_batch_size"]),
            scaling=ScalingFn.from_dict(d["scaling"]),
            epsilon=float(d["epsilon"]),
            rcu_samples=[
                RcuSample(int(s["batch_size"]), float(s["mean_utility"]),
                          math.inf if s["rcu"] is None else float(s["rcu"]))
                for s in d.get("rcu_samples", [])
            ],
        )


@dataclass
class CalibrationProfile:
    models: list[ModelCalibration]
    coreset: list[str] = field(default_factory=list)

    def __getitem__(self, model_id: str) -> ModelCalibration:
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise KeyError(model_id)

    def apply(self, pool: ModelPool) -> ModelPool:
        """Pool with each model's grid, effective batch size and scaling set from the profile."""
        out = []
        for m in pool.models:
            c = self[m.id]
            grid = [b for b in c.grid if b <= c.b_max]
            out.append(m.calibrated(batch_grid=grid, effective_batch_size=c.effective_batch_size,
                                    scaling=c.scaling))
        return ModelPool(tuple(out))

    def to_dict(self) -> dict:
        return {"coreset": list(self.coreset), "models": [m.to_dict() for m in self.models]}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationProfile":
        return cls(models=[ModelCalibration.from_dict(m) for m in d["models"]],
                   coreset=list(d.get("coreset", [])))


def calibrate_model(
    model: ModelSpec,
    coreset: Sequence[Query],
    probe: BatchUtilityProbe,
    *,
    model_index: int,
    epsilon: float = DEFAULT_EPSILON,
    scaling_kind: str = PIECEWISE_LINEAR,
    grid_cap: int | None = None,
    exhaustive: bool = False,
) -> ModelCalibration:
    mean_cost = sum((query_cost(q, model) for q in coreset), Fraction(0)) / len(coreset)
    b_max = max_batch_size(model, mean_cost, epsilon)
    cached = _CachedProbe(probe)
    b_eff, searched = calibrate_effective_batch(
        model, coreset, cached, epsilon, model_index=model_index, b_max=b_max,
        grid_cap=grid_cap, exhaustive=exhaustive,
    )
    # the scaling fit needs every usable grid point, not only those the search touched
    grid = candidate_grid(b_max, grid_cap)
    seen = {s.batch_size: s for s in searched}
    points = []
    for b in grid:
        if b > b_eff:
            break
        if b in seen:
            mu = seen[b].mean_utility
        else:
            mu = float(np.mean(cached(model_index, b, coreset).utilities))
        points.append((b, mu))
    scaling = _fit(points, scaling_kind, model.id)
    return ModelCalibration(model.id, b_max, grid, b_eff, scaling, float(epsilon), searched)


class _CachedProbe:
    def __init__(self, probe):
        self.probe = probe
        self.cache = {}

    def __call__(self, model_index, batch_size, coreset):
        key = (model_index, batch_size)
        if key not in self.cache:
            self.cache[key] = self.probe(model_index, batch_size, coreset)
        return self.cache[key]


def _fit(points, kind, model_id) -> ScalingFn:
    u1 = dict(points).get(1, 0.0)
    if u1 <= 0:
        log.warning("model %s: zero unbatched utility on coreset, using constant scaling", model_id)
        return ScalingFn(CONSTANT)
    if kind == POWER_LAW and len(points) >= 3:
        return fit_scaling_power_law(points)
    if kind == CONSTANT:
        return ScalingFn(CONSTANT)
    return fit_scaling_piecewise(points)


def calibrate_pool(
    pool: ModelPool,
    training: Sequence[Query],
    probe: BatchUtilityProbe,
    *,
    epsilon: float = DEFAULT_EPSILON,
    coreset_size: int = DEFAULT_CORESET_SIZE,
    scaling_kind: str = PIECEWISE_LINEAR,
    grid_cap: int | None = None,
    exhaustive: bool = False,
) -> CalibrationProfile:
    """Run coreset selection, then per-model bound, search and scaling fit."""
    if not training:
        raise ValueError("training set is empty")
    m = min(coreset_size, len(training))
    idx = k_center_coreset(np.stack([q.embedding for q in training]), m)
    coreset = [training[i] for i in idx]
    models = [
        calibrate_model(model, coreset, probe, model_index=k, epsilon=epsilon,
                        scaling_kind=scaling_kind, grid_cap=grid_cap, exhaustive=exhaustive)
        for k, model in enumerate(pool.models)
    ]
    return CalibrationProfile(models, [q.id for q in coreset])
