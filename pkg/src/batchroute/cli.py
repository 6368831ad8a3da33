"""Command-line entry point: calibrate, route, simulate, reduce, frontier."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .calibration import DEFAULT_CORESET_SIZE, DEFAULT_EPSILON, CalibrationProfile, calibrate_pool
from .core import as_fraction, format_money
from .frontier import build_frontiers, candidate_states, write_frontiers_csv
from .io import (SchemaError, TableProbe, exact_instance_to_dict, frontiers_from_dict, mc_from_dict,
                 pool_from_dict, read_json, workload_from_dict, write_json)
from .oracle import (DEFAULT_CAP, Infeasible, OracleCapExceeded, brute_force_max_coverage, exact_solve,
                     reduce_max_coverage)
from .router import DEFAULT_K, DEFAULT_METRIC, Router, train_router
from .scaling import KINDS, PIECEWISE_LINEAR
from .scheduler import (BudgetInfeasible, assignment_to_dict, batches_to_list, exact_spend,
                        greedy_schedule, pack_batches, write_trace_csv)
from .simulator import SyntheticPoolSpec, gen_workload, prepare, run_strategy, write_eval_csv

log = logging.getLogger("batchroute")

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_IO = 3
EXIT_CAP = 4


def _budget(text: str) -> Fraction:
    try:
        b = as_fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a decimal amount: {text!r}")
    if b <= 0:
        raise argparse.ArgumentTypeError("budget must be positive")
    return b


def _budgets(text: str) -> list[Fraction]:
    return [_budget(t) for t in text.split(",") if t.strip()]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_router(args, pool_size: int) -> Router:
    if args.router:
        router = Router.from_dict(read_json(args.router))
    elif args.train:
        router = train_router(workload_from_dict(read_json(args.train)), args.k_neighbors, args.metric)
    else:
        raise SchemaError("routing needs --router or --train")
    if router.n_models != pool_size:
        raise SchemaError(f"router predicts {router.n_models} models, pool has {pool_size}")
    return router


def cmd_calibrate(args) -> int:
    pool = pool_from_dict(read_json(args.pool))
    training = workload_from_dict(read_json(args.workload))
    if any(q.truth_utilities is None for q in training):
        raise SchemaError("training labels required")
    profile = calibrate_pool(pool, training, TableProbe(pool), epsilon=args.epsilon,
                             coreset_size=args.coreset_size, scaling_kind=args.scaling,
                             grid_cap=args.grid_cap, exhaustive=args.exhaustive_scan)
    path = _out(args) / "profile.json"
    write_json(profile.to_dict(), path)
    print(f"{'model':<16}{'b_max':>8}{'b_effect':>10}")
    for m in profile.models:
        print(f"{m.model_id:<16}{m.b_max:>8}{m.effective_batch_size:>10}")
    print(f"wrote {path}")
    return EXIT_OK


def _route_frontiers_file(args) -> int:
    models, frontiers = frontiers_from_dict(read_json(args.frontiers))
    assignment = greedy_schedule(frontiers, args.budget)
    batches = pack_batches(assignment)
    out = _out(args)
    write_json(assignment_to_dict(assignment, models), out / "assignment.json")
    write_json(batches_to_list(batches, models), out / "batches.json")
    write_trace_csv(assignment, out / "trace.csv", models)
    print(f"amortized spend {format_money(assignment.amortized_spend)}  exact spend n/a  "
          f"proxy utility {float(assignment.total_proxy_utility):.6f}")
    return EXIT_OK


def cmd_route(args) -> int:
    if args.frontiers:
        return _route_frontiers_file(args)
    if not (args.pool and args.profile and args.workload):
        raise SchemaError("route needs --pool, --profile and --workload (or --frontiers)")
    pool = CalibrationProfile.from_dict(read_json(args.profile)).apply(pool_from_dict(read_json(args.pool)))
    queries = workload_from_dict(read_json(args.workload))
    router = _load_router(args, len(pool))
    u1 = router.predict(np.stack([q.embedding for q in queries]))
    frontiers = build_frontiers(queries, candidate_states(pool), u1, pool)
    assignment = greedy_schedule(frontiers, args.budget)
    batches = pack_batches(assignment, pool)
    spend = exact_spend(batches, pool, {q.id: q for q in queries})

    out = _out(args)
    doc = assignment_to_dict(assignment, pool)
    doc["exact_spend"] = format_money(spend)
    write_json(doc, out / "assignment.json")
    write_json(batches_to_list(batches, pool), out / "batches.json")
    write_trace_csv(assignment, out / "trace.csv", pool)
    if not args.router:
        write_json(router.to_dict(), out / "router.json")
    print(f"amortized spend {format_money(assignment.amortized_spend)}  "
          f"exact spend {format_money(spend)}  "
          f"proxy utility {float(assignment.total_proxy_utility):.6f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    d = read_json(args.sim)
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        spec = SyntheticPoolSpec.from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"simulation spec: {e}") from e
    world = gen_workload(spec)
    pipe = prepare(world, epsilon=args.epsilon, coreset_size=args.coreset_size,
                   k_neighbors=args.k_neighbors, exhaustive=args.exhaustive_scan)
    points = []
    for budget in args.budget:
        for strategy in args.strategy.split(","):
            points.append(run_strategy(strategy.strip(), pipe, budget, oracle=args.oracle,
                                       oracle_cap=args.oracle_cap))
    path = _out(args) / "eval.csv"
    write_eval_csv(points, path)
    for p in points:
        print(f"{p.strategy:<16} budget {format_money(p.budget):>14}  cost {format_money(p.cost):>14}  "
              f"utility {p.utility:.1f}")
    return EXIT_OK


def cmd_reduce(args) -> int:
    mc = mc_from_dict(read_json(args.mc))
    inst = reduce_max_coverage(mc)
    coverage = brute_force_max_coverage(mc)
    try:
        routed = int(exact_solve(inst, args.oracle_cap).utility)
        note = ""
    except Infeasible:
        # every query must be served, and serving any costs at least one model
        routed, note = 0, " (no routing fits the budget)"
    if args.out:
        write_json(exact_instance_to_dict(inst), _out(args) / "reduced.json")
    verdict = "yes" if routed == coverage else "no"
    print(f"{routed} == {coverage}: {verdict}{note}")
    return EXIT_OK if routed == coverage else 1


def cmd_frontier(args) -> int:
    pool = CalibrationProfile.from_dict(read_json(args.profile)).apply(pool_from_dict(read_json(args.pool)))
    queries = workload_from_dict(read_json(args.workload))
    router = _load_router(args, len(pool))
    u1 = router.predict(np.stack([q.embedding for q in queries]))
    frontiers = build_frontiers(queries, candidate_states(pool), u1, pool)
    path = _out(args) / "frontiers.csv"
    write_frontiers_csv(frontiers, path, pool)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="batchroute", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, router=False):
        sp.add_argument("--pool")
        sp.add_argument("--workload")
        sp.add_argument("--profile")
        sp.add_argument("--out", default=".")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--oracle-cap", type=int, default=DEFAULT_CAP)
        sp.add_argument("--exhaustive-scan", action="store_true",
                        help="scan every candidate batch size instead of ternary search")
        if router:
            sp.add_argument("--router", help="router JSON sidecar")
            sp.add_argument("--train", help="labelled workload to fit a router from")
            sp.add_argument("--k-neighbors", type=int, default=DEFAULT_K)
            sp.add_argument("--metric", default=DEFAULT_METRIC, choices=("cosine", "euclidean"))

    sp = sub.add_parser("calibrate", help="profile batch sizes and fit scaling per model")
    common(sp)
    sp.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    sp.add_argument("--coreset-size", type=int, default=DEFAULT_CORESET_SIZE)
    sp.add_argument("--scaling", choices=KINDS, default=PIECEWISE_LINEAR)
    sp.add_argument("--grid-cap", type=int)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("route", help="assign states under a budget and pack batches")
    common(sp, router=True)
    sp.add_argument("--budget", type=_budget, required=True)
    sp.add_argument("--frontiers", help="precomputed frontiers JSON; skips pool/profile/router")
    sp.set_defaults(func=cmd_route)

    sp = sub.add_parser("simulate", help="budget sweep over strategies on a synthetic pool")
    common(sp)
    sp.add_argument("--sim", required=True, help="synthetic pool spec JSON")
    sp.add_argument("--budget", type=_budgets, required=True, help="comma-separated budgets")
    sp.add_argument("--strategy", default="robatch,router_only")
    sp.add_argument("--oracle", action="store_true", help="solve each point exactly")
    sp.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    sp.add_argument("--coreset-size", type=int, default=DEFAULT_CORESET_SIZE)
    sp.add_argument("--k-neighbors", type=int, default=DEFAULT_K)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("reduce", help="max-coverage to routing reduction with both optima")
    sp.add_argument("--mc", required=True)
    sp.add_argument("--out")
    sp.add_argument("--oracle-cap", type=int, default=DEFAULT_CAP)
    sp.set_defaults(func=cmd_reduce)

    sp = sub.add_parser("frontier", help="export per-query Pareto frontiers as CSV")
    common(sp, router=True)
    sp.set_defaults(func=cmd_frontier)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ROBATCH_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BudgetInfeasible as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OracleCapExceeded as e:
        print(f"error: oracle cap exceeded: {e}", file=sys.stderr)
        return EXIT_CAP
    except (SchemaError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
