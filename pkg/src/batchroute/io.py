"""JSON readers and writers for pools, workloads, frontiers and max-coverage instances."""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import ProbeResult
from .core import ModelPool, ModelSpec, Query, State, as_fraction, batch_group_cost, format_money
from .frontier import Frontier, FrontierEntry
from .oracle import AMORTIZED, ExactInstance, MCInstance


class SchemaError(ValueError):
    pass


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON: {e}") from e


def write_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _money(v, where):
    if isinstance(v, bool) or not isinstance(v, (str, int, float)):
        raise SchemaError(f"{where}: expected a decimal string or number")
    try:
        return as_fraction(v)
    except (ValueError, ZeroDivisionError) as e:
        raise SchemaError(f"{where}: {e}") from e


def pool_from_dict(d: dict) -> ModelPool:
    try:
        models = []
        for i, m in enumerate(d["models"]):
            kw = {}
            if "batch_grid" in m:
                kw["batch_grid"] = tuple(int(b) for b in m["batch_grid"])
            models.append(ModelSpec(
                str(m["id"]),
                _money(m["input_price"], f"models[{i}].input_price"),
                _money(m["output_price"], f"models[{i}].output_price"),
                int(m.get("system_prompt_tokens", 0)),
                **kw,
            ))
        return ModelPool(tuple(models))
    except (KeyError, TypeError) as e:
        raise SchemaError(f"pool: missing or malformed field {e}") from e
    except ValueError as e:
        if isinstance(e, SchemaError):
            raise
        raise SchemaError(f"pool: {e}") from e


def pool_to_dict(pool: ModelPool) -> dict:
    return {"models": [
        {"id": m.id, "input_price": format_money(m.input_price),
         "output_price": format_money(m.output_price),
         "system_prompt_tokens": m.system_prompt_tokens}
        for m in pool.models
    ]}


def workload_from_dict(d: dict) -> list[Query]:
    try:
        dim = int(d["dim"])
        out = []
        for q in d["queries"]:
            emb = np.asarray(q["embedding"], dtype=float)
            if emb.shape != (dim,):
                raise SchemaError(f"query {q.get('id')}: embedding dimension {emb.shape} != {dim}")
            out.append(Query(
                str(q["id"]), emb, int(q["input_tokens"]), int(q["expected_output_tokens"]),
                q.get("truth_utilities"), q.get("batch_utilities"),
            ))
    except (KeyError, TypeError) as e:
        raise SchemaError(f"workload: missing or malformed field {e}") from e
    except ValueError as e:
        if isinstance(e, SchemaError):
            raise
        raise SchemaError(f"workload: {e}") from e
    ids = [q.id for q in out]
    if len(set(ids)) != len(ids):
        raise SchemaError("workload: duplicate query ids")
    return out


def workload_to_dict(queries: Sequence[Query]) -> dict:
    dim = len(queries[0].embedding) if queries else 0
    rows = []
    for q in queries:
        r = {"id": q.id, "embedding": [float(x) for x in q.embedding],
             "input_tokens": q.input_tokens, "expected_output_tokens": q.expected_output_tokens}
        if q.truth_utilities is not None:
            r["truth_utilities"] = list(q.truth_utilities)
        if q.batch_utilities:
            r["batch_utilities"] = q.batch_utilities
        rows.append(r)
    return {"dim": dim, "queries": rows}


class TableProbe:
    """Probe backed by utilities recorded in the workload file.

    A query's ``batch_utilities[model_id][b]`` is used when present; otherwise
    its unbatched label stands for every batch size.
    """

    def __init__(self, pool: ModelPool):
        self.pool = pool

    def __call__(self, model_index: int, batch_size: int, coreset: Sequence[Query]) -> ProbeResult:
        model = self.pool.models[model_index]
        utils = []
        for q in coreset:
            table = (q.batch_utilities or {}).get(model.id, {})
            v = table.get(str(batch_size), table.get(batch_size))
            if v is None:
                if q.truth_utilities is None:
                    raise SchemaError("training labels required")
                v = q.truth_utilities[model_index]
            utils.append(float(v))
        return ProbeResult(np.array(utils), batch_group_cost(model, batch_size, coreset))


def frontiers_from_dict(d: dict) -> tuple[list[str], list[Frontier]]:
    """Precomputed frontiers: ``{"models": [ids], "frontiers": [{"query", "entries": [...]}]}``."""
    try:
        models = [str(m) for m in d["models"]]
        index = {m: k for k, m in enumerate(models)}
        out = []
        for f in d["frontiers"]:
            entries = tuple(
                FrontierEntry(State(index[e["model"]], int(e["batch"])),
                              _money(e["cost"], f"{f['query']}.cost"), as_fraction(e["utility"]))
                for e in f["entries"]
            )
            costs = [e.cost for e in entries]
            utils = [e.utility for e in entries]
            if not entries or any(b <= a for a, b in zip(costs, costs[1:])) or \
                    any(b <= a for a, b in zip(utils, utils[1:])):
                raise SchemaError(f"frontier {f['query']}: entries must strictly increase in cost and utility")
            out.append(Frontier(str(f["query"]), entries))
        return models, out
    except (KeyError, TypeError) as e:
        raise SchemaError(f"frontiers: missing or malformed field {e}") from e


def mc_from_dict(d: dict) -> MCInstance:
    """``{"n": 3, "sets": [[0, 1], [1, 2]], "budget": 1}`` with 0-based element ids."""
    try:
        return MCInstance(int(d["n"]), tuple(tuple(int(e) for e in s) for s in d["sets"]), int(d["budget"]))
    except (KeyError, TypeError) as e:
        raise SchemaError(f"max-coverage instance: missing or malformed field {e}") from e
    except ValueError as e:
        raise SchemaError(f"max-coverage instance: {e}") from e


def exact_instance_to_dict(inst: ExactInstance) -> dict:
    return {
        "cost_mode": inst.cost_mode,
        "budget": format_money(inst.budget),
        "queries": [
            [
                {"model": o.state.model_index, "batch": o.state.batch_size,
                 "utility": float(o.utility),
                 **({"cost": format_money(o.cost)} if inst.cost_mode == AMORTIZED else
                    {"sys_cost": format_money(o.sys_cost), "query_cost": format_money(o.query_cost)})}
                for o in opts
            ]
            for opts in inst.options
        ],
    }
