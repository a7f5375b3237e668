"""Command line front end.

Subcommands wire the library into reproducible runs: generate instances,
solve and certify them, run the monotonicity/sensitivity/shill suites, the
regret grid, the misreport grid, and the solver-vs-oracle comparison. Every
command is deterministic given its flags, numeric output is written with full
round-trip precision, and exit codes carry the scientific outcome: a solve
exits nonzero when it did not converge, a suite when a guaranteed relation
failed, the oracle check when the solver strays from ground truth.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .checks import certify
from .dual import solve_dual
from .market import (
    InstanceFormatError,
    MarketInstance,
    SolverConfig,
    generate_complete_graph,
    load_instance,
    save_instance,
)
from .oracle import MAX_ORACLE_GOODS, compare_solver_oracle
from .statics import (
    failed_assertions,
    monotonicity_records,
    sensitivity_records,
    shill_records,
    write_records_csv,
)
from .strategic import (
    grid_instance_seed,
    instance_regrets,
    misreport_grid,
    write_misreport_csv,
    write_regret_csv,
)


def _config_from_args(args) -> SolverConfig:
    return SolverConfig(
        max_iters=args.max_iters,
        tol_kkt=args.tol,
        tie_epsilon=args.tie_epsilon,
        seed=args.seed,
        step_rule=args.step_rule,
    )


def _add_solver_flags(parser):
    parser.add_argument("--tol", type=float, default=1e-6, help="convergence tolerance on the max residual")
    parser.add_argument("--max-iters", type=int, default=200_000)
    parser.add_argument("--tie-epsilon", type=float, default=1e-6)
    parser.add_argument("--seed", type=int, default=0, help="solver initialization seed")
    parser.add_argument("--step-rule", choices=("fixed", "diminishing", "adaptive"), default="adaptive")


def _pmap(fn, items, jobs):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    inst = generate_complete_graph(args.bidders, args.goods, args.seed, args.budget_scale)
    save_instance(inst, args.out)
    v, b = inst.values, inst.budgets
    print(f"wrote {args.out}: {inst.num_bidders} bidders x {inst.num_goods} goods")
    print(f"values in [{v.min():.6f}, {v.max():.6f}], budgets in [{b.min():.6f}, {b.max():.6f}]"
          f" (budget_scale={args.budget_scale})")
    return 0


def solve_document(inst: MarketInstance, cfg: SolverConfig) -> dict:
    """Solve and certify one instance; the returned document is what cmd_solve
    writes to disk."""
    result = solve_dual(inst, cfg)
    doc = {
        "solver": {
            "converged": result.converged,
            "status": result.status,
            "iterations": result.iterations,
            "kkt_residual": result.kkt_residual,
            "method": result.method,
            "dual_objective": result.dual.objective,
            "config": {
                "max_iters": cfg.max_iters, "step_rule": cfg.step_rule,
                "tol_kkt": cfg.tol_kkt, "tie_epsilon": cfg.tie_epsilon, "seed": cfg.seed,
            },
        }
    }
    if result.outcome is not None:
        out = result.outcome
        report = certify(inst, out, cfg.tol_kkt)
        doc["outcome"] = {
            "alpha": out.alpha, "allocation": out.allocation, "prices": out.prices,
            "spend": out.spend, "utility": out.utility,
        }
        doc["report"] = report.flat()
    return _jsonable(doc)


def cmd_solve(args) -> int:
    try:
        inst = load_instance(args.instance)
    except (InstanceFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cfg = _config_from_args(args)
    doc = solve_document(inst, cfg)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    solver = doc["solver"]
    print(f"status={solver['status']} iterations={solver['iterations']} "
          f"kkt_residual={solver['kkt_residual']:.3e}")
    if "report" in doc:
        print(f"revenue={doc['report']['revenue']!r} "
              f"social_welfare={doc['report']['social_welfare']!r}")
        print("alpha=" + " ".join(repr(a) for a in doc["outcome"]["alpha"]))
    return 0 if solver["converged"] else 1


def _statics_worker(task):
    suite, index, n, m, inst_seed, budget_scale, deltas, cfg, edit_seed = task
    inst = generate_complete_graph(n, m, inst_seed, budget_scale)
    if suite == "monotonicity":
        return monotonicity_records(inst, index, cfg, edit_seed)
    if suite == "sensitivity":
        return sensitivity_records(inst, index, deltas, cfg, edit_seed)
    return shill_records(inst, index, cfg, edit_seed)


def cmd_statics(args) -> int:
    cfg = _config_from_args(args)
    deltas = [float(d) for d in args.deltas.split(",")] if args.deltas else [0.1, 0.5, 1.0]
    rng = np.random.default_rng(args.seed)
    tasks = []
    for index in range(args.count):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(4, 15))
        tasks.append((args.suite, index, n, m, args.seed + 7919 * index,
                      args.budget_scale, deltas, cfg, args.seed))
    records = [rec for batch in _pmap(_statics_worker, tasks, args.jobs) for rec in batch]
    write_records_csv(records, args.out)
    skipped = sum(1 for r in records if not r.converged)
    failures = failed_assertions(records)
    print(f"{args.suite}: {len(records)} records from {args.count} instances "
          f"({skipped} skipped non-converged) -> {args.out}")
    for r in failures:
        print(f"VIOLATION {r.edit} {r.relation} slack={r.slack!r} params={r.params}")
    print(f"guaranteed-relation failures: {len(failures)}")
    return 0 if not failures else 1


def _regret_worker(task):
    n, m, seed, budget_scale, cfg = task
    inst = generate_complete_graph(n, m, grid_instance_seed(n, m, seed), budget_scale)
    result = solve_dual(inst, cfg)
    base = {"n": n, "m": m, "seed": seed, "converged": result.converged}
    if not result.converged:
        return [base]
    return [{**base, **rec.__dict__} for rec in instance_regrets(inst, result.outcome)]


def cmd_regret(args) -> int:
    cfg = _config_from_args(args)
    bidder_counts = [int(x) for x in args.bidders.split(",")]
    good_counts = [int(x) for x in args.goods.split(",")]
    tasks = [
        (n, m, s, args.budget_scale, cfg)
        for n in bidder_counts for m in good_counts for s in range(args.seeds)
    ]
    rows = [row for batch in _pmap(_regret_worker, tasks, args.jobs) for row in batch]
    write_regret_csv(rows, args.out)
    skipped = sum(1 for r in rows if not r["converged"])
    print(f"regret grid: {len(rows)} rows over {len(tasks)} instances "
          f"({skipped} non-converged) -> {args.out}")
    return 0


def cmd_misreport(args) -> int:
    try:
        inst = load_instance(args.instance)
    except (InstanceFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cfg = _config_from_args(args)
    rows, best = misreport_grid(inst, args.bidder, cfg=cfg)
    write_misreport_csv(rows, args.out)
    print(f"misreport grid for bidder {args.bidder}: {len(rows)} cells "
          f"({best['skipped']} skipped) -> {args.out}")
    print(f"truthful_utility={best['truthful_utility']!r} best_gain={best.get('gain', 0.0)!r} "
          f"at lambda_v={best.get('lambda_v', 1.0)} lambda_b={best.get('lambda_b', 1.0)}")
    return 0


def _oracle_worker(task):
    n, m, inst_seed, budget_scale, cfg = task
    inst = generate_complete_graph(n, m, inst_seed, budget_scale)
    gaps = compare_solver_oracle(inst, cfg)
    return {"n": n, "m": m, "seed": inst_seed, **gaps}


def cmd_oracle_check(args) -> int:
    cfg = _config_from_args(args)
    if args.instance:
        inst = load_instance(args.instance)
        if int((inst.values.max(axis=0) > 0).sum()) > MAX_ORACLE_GOODS:
            print(f"error: oracle allows at most {MAX_ORACLE_GOODS} valued goods", file=sys.stderr)
            return 2
        results = [{"instance": args.instance, **compare_solver_oracle(inst, cfg)}]
    else:
        rng = np.random.default_rng(args.seed)
        tasks = []
        for k in range(args.count):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 3))
            tasks.append((n, m, args.seed + 104_729 * k, args.budget_scale, cfg))
        results = _pmap(_oracle_worker, tasks, args.jobs)
    worst = max(r["alpha_gap"] for r in results)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(_jsonable({"results": results, "worst_alpha_gap": worst}), fh, indent=1)
            fh.write("\n")
    for r in results:
        print(f"alpha_gap={r['alpha_gap']:.3e} objective_gap={r['objective_gap']:.3e}")
    print(f"worst alpha_gap={worst:.3e} threshold={args.threshold}")
    return 0 if worst <= args.threshold else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pacinglab",
        description="Budget-paced first-price auction markets: solve, verify, experiment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random dense instance")
    p.add_argument("--bidders", type=int, required=True)
    p.add_argument("--goods", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget-scale", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("solve", help="solve one instance and certify the outcome")
    p.add_argument("--instance", required=True)
    p.add_argument("--out", help="write outcome + report + solver metadata JSON here")
    _add_solver_flags(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("statics", help="monotonicity / sensitivity / shill suites")
    p.add_argument("--suite", choices=("monotonicity", "sensitivity", "shill"), required=True)
    p.add_argument("--count", type=int, default=200, help="number of random instances")
    p.add_argument("--deltas", help="comma separated budget deltas (sensitivity)")
    p.add_argument("--budget-scale", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(fn=cmd_statics)

    p = sub.add_parser("regret", help="best-response regret over an instance grid")
    p.add_argument("--bidders", default="2,4,6,8", help="comma separated bidder counts")
    p.add_argument("--goods", default="4,6,8,10,12,14", help="comma separated good counts")
    p.add_argument("--seeds", type=int, default=5, help="instances per grid cell")
    p.add_argument("--budget-scale", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(fn=cmd_regret)

    p = sub.add_parser("misreport", help="value/budget misreport grid for one bidder")
    p.add_argument("--instance", required=True)
    p.add_argument("--bidder", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(fn=cmd_misreport)

    p = sub.add_parser("oracle-check", help="compare the solver against the grid oracle")
    p.add_argument("--instance", help="check one instance (at most 3 valued goods)")
    p.add_argument("--count", type=int, default=60, help="random small instances when no --instance")
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--budget-scale", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    _add_solver_flags(p)
    p.set_defaults(fn=cmd_oracle_check)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
