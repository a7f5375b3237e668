"""Instance edits and the monotonicity / sensitivity / shill experiment suites.

Each suite solves instance pairs (before, after a single edit), records what
happened, and grades the relations that are guaranteed to hold: revenue never
drops when a good, bidder, or budget is added; social welfare never drops when
a good is added; multipliers move down when goods arrive and up when budgets
grow, with the budget move bounded by the relative budget change. Edits whose
direction is not guaranteed are recorded without assertion. Pairs where either
solve misses tolerance are skipped and counted, so solver noise never shows up
as a property violation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .checks import metrics
from .dual import solve_dual
from .market import MarketInstance, SolverConfig

GUARANTEED_RELATIONS = (
    "revenue_weakly_up",
    "sw_weakly_up",
    "alpha_weakly_down",
    "alpha_weakly_up",
    "rev_delta_at_least_zero",
    "rev_delta_at_most_delta",
    "sw_ratio_lower",
    "sw_ratio_upper",
    "alpha_sandwich_lower",
    "alpha_sandwich_upper",
    "shill_real_revenue_not_up",
)


def statics_tol(reference: float) -> float:
    # comparisons are scale-aware in the magnitude of the before value
    return 1e-5 * max(1.0, abs(reference))


@dataclass
class StaticsRecord:
    edit: str
    params: dict
    before: dict
    after: dict
    relation: str
    holds: bool
    slack: float
    converged: bool = True


# ---------------------------------------------------------------- edits

def add_good(inst: MarketInstance, new_column) -> MarketInstance:
    col = np.asarray(new_column, dtype=float).reshape(-1, 1)
    if col.shape[0] != inst.num_bidders:
        raise ValueError(f"new column has {col.shape[0]} entries for {inst.num_bidders} bidders")
    return MarketInstance(np.hstack([inst.values, col]), inst.budgets)


def add_bidder(inst: MarketInstance, new_row, budget: float) -> MarketInstance:
    row = np.asarray(new_row, dtype=float).reshape(1, -1)
    if row.shape[1] != inst.num_goods:
        raise ValueError(f"new row has {row.shape[1]} entries for {inst.num_goods} goods")
    if budget <= 0:
        raise ValueError("new bidder needs a strictly positive budget")
    return MarketInstance(np.vstack([inst.values, row]), np.append(inst.budgets, budget))


def add_budget(inst: MarketInstance, i: int, delta: float) -> MarketInstance:
    if delta < 0:
        raise ValueError("budget increase must be nonnegative")
    budgets = inst.budgets.copy()
    budgets[i] += delta
    return MarketInstance(inst.values.copy(), budgets)


def scale_budget(inst: MarketInstance, i: int, factor: float) -> MarketInstance:
    if factor <= 0:
        raise ValueError("budget factor must be positive")
    budgets = inst.budgets.copy()
    budgets[i] *= factor
    return MarketInstance(inst.values.copy(), budgets)


def set_value(inst: MarketInstance, i: int, j: int, value: float) -> MarketInstance:
    if value < 0:
        raise ValueError("values must be nonnegative")
    values = inst.values.copy()
    values[i, j] = value
    return MarketInstance(values, inst.budgets.copy())


# ---------------------------------------------------------------- suites

def _summary(inst: MarketInstance, result) -> dict:
    m = metrics(inst, result.outcome)
    return {
        "revenue": m["revenue"],
        "social_welfare": m["social_welfare"],
        "alpha": result.alpha.tolist(),
    }


def _record(edit, params, before, after, relation, slack, reference=1.0) -> StaticsRecord:
    holds = slack >= -statics_tol(reference)
    if relation.startswith("observe"):
        holds = True
    return StaticsRecord(
        edit=edit, params=params, before=before, after=after,
        relation=relation, holds=holds, slack=float(slack),
    )


def _skipped(edit, params) -> StaticsRecord:
    return StaticsRecord(
        edit=edit, params=params, before={}, after={},
        relation="skipped_nonconverged", holds=True, slack=0.0, converged=False,
    )


def monotonicity_records(
    inst: MarketInstance, index: int, cfg: SolverConfig | None = None, edit_seed: int = 0
) -> list[StaticsRecord]:
    """Apply one random edit to the instance and grade the guaranteed cells.

    add_good asserts revenue up, welfare up, and multipliers down; add_bidder
    asserts revenue up; add_budget asserts revenue up and multipliers up; a
    value increase is recorded without assertion (it can move revenue and
    welfare either way). The edit is drawn from (edit_seed, index) so suite
    output is independent of how instances are batched across workers.
    """
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng([edit_seed, index])
    records: list[StaticsRecord] = []
    n, m = inst.num_bidders, inst.num_goods
    kind = rng.choice(["add_good", "add_bidder", "add_budget", "set_value"])
    if kind == "add_good":
        column = rng.random(n)
        edited, params = add_good(inst, column), {"column": column.tolist()}
    elif kind == "add_bidder":
        row = rng.random(m)
        budget = float(rng.random() * 2.0 * inst.budgets.mean())
        budget = max(budget, 1e-3 * inst.budgets.mean())
        edited, params = add_bidder(inst, row, budget), {"row": row.tolist(), "budget": budget}
    elif kind == "add_budget":
        i = int(rng.integers(n))
        delta = float(rng.random() * inst.budgets[i])
        edited, params = add_budget(inst, i, delta), {"bidder": i, "delta": delta}
    else:
        i, j = int(rng.integers(n)), int(rng.integers(m))
        value = float(inst.values[i, j] + rng.random())
        edited, params = set_value(inst, i, j, value), {"bidder": i, "good": j, "value": value}

    r0 = solve_dual(inst, cfg)
    r1 = solve_dual(edited, cfg)
    if not (r0.converged and r1.converged):
        return [_skipped(kind, params)]
    before, after = _summary(inst, r0), _summary(edited, r1)
    a0, a1 = np.asarray(before["alpha"]), np.asarray(after["alpha"])
    rev_slack = after["revenue"] - before["revenue"]
    sw_slack = after["social_welfare"] - before["social_welfare"]
    mk = lambda rel, slack, ref: records.append(_record(kind, params, before, after, rel, slack, ref))
    if kind == "add_good":
        mk("revenue_weakly_up", rev_slack, before["revenue"])
        mk("sw_weakly_up", sw_slack, before["social_welfare"])
        mk("alpha_weakly_down", float((a0 - a1).min()), 1.0)
    elif kind == "add_bidder":
        mk("revenue_weakly_up", rev_slack, before["revenue"])
        mk("observe_social_welfare", sw_slack, 1.0)
    elif kind == "add_budget":
        mk("revenue_weakly_up", rev_slack, before["revenue"])
        mk("alpha_weakly_up", float((a1 - a0).min()), 1.0)
        mk("observe_social_welfare", sw_slack, 1.0)
    else:
        mk("observe_revenue", rev_slack, 1.0)
        mk("observe_social_welfare", sw_slack, 1.0)
    return records


def run_monotonicity_suite(
    instances, cfg: SolverConfig | None = None, edit_seed: int = 0
) -> list[StaticsRecord]:
    records: list[StaticsRecord] = []
    for index, inst in enumerate(instances):
        records.extend(monotonicity_records(inst, index, cfg, edit_seed))
    return records


def sensitivity_records(
    inst: MarketInstance, index: int, deltas,
    cfg: SolverConfig | None = None, edit_seed: int = 0,
) -> list[StaticsRecord]:
    """Budget perturbations of one random bidder of the instance.

    For each delta: the additive bump B_i + delta must move revenue by some
    amount in [0, delta]; the relative bump (1 + delta) B_i must keep the
    welfare ratio within [(1 - delta - delta^2)/(1 + delta), 1 + delta] and
    every multiplier within [alpha, (1 + delta) alpha].
    """
    cfg = cfg or SolverConfig()
    rng = np.random.default_rng([edit_seed, index])
    records: list[StaticsRecord] = []
    i = int(rng.integers(inst.num_bidders))
    r0 = solve_dual(inst, cfg)
    if not r0.converged:
        return [_skipped("sensitivity_base", {"bidder": i})]
    before = _summary(inst, r0)
    a0 = np.asarray(before["alpha"])
    for delta in deltas:
        params = {"bidder": i, "delta": float(delta)}
        bumped = add_budget(inst, i, delta)
        rb = solve_dual(bumped, cfg)
        if not rb.converged:
            records.append(_skipped("add_budget", params))
        else:
            after = _summary(bumped, rb)
            change = after["revenue"] - before["revenue"]
            records.append(_record("add_budget", params, before, after,
                                   "rev_delta_at_least_zero", change, before["revenue"]))
            records.append(_record("add_budget", params, before, after,
                                   "rev_delta_at_most_delta", delta - change, before["revenue"]))

        scaled = scale_budget(inst, i, 1.0 + delta)
        rs = solve_dual(scaled, cfg)
        if not rs.converged:
            records.append(_skipped("scale_budget", params))
            continue
        after = _summary(scaled, rs)
        a1 = np.asarray(after["alpha"])
        records.append(_record("scale_budget", params, before, after,
                               "alpha_sandwich_lower", float((a1 - a0).min()), 1.0))
        records.append(_record("scale_budget", params, before, after,
                               "alpha_sandwich_upper", float(((1.0 + delta) * a0 - a1).min()), 1.0))
        if before["social_welfare"] > 1e-12:
            ratio = after["social_welfare"] / before["social_welfare"]
            lower = (1.0 - delta - delta**2) / (1.0 + delta)
            records.append(_record("scale_budget", params, before, after,
                                   "sw_ratio_lower", ratio - lower, 1.0))
            records.append(_record("scale_budget", params, before, after,
                                   "sw_ratio_upper", (1.0 + delta) - ratio, 1.0))
    return records


def run_sensitivity_suite(
    instances, deltas, cfg: SolverConfig | None = None, edit_seed: int = 0
) -> list[StaticsRecord]:
    records: list[StaticsRecord] = []
    for index, inst in enumerate(instances):
        records.extend(sensitivity_records(inst, index, deltas, cfg, edit_seed))
    return records


def shill_proofness_check(
    inst: MarketInstance, fake_row, fake_budget: float, cfg: SolverConfig | None = None
) -> StaticsRecord:
    """Adding a fake bidder must not raise the revenue collected from the real
    ones beyond the original clearing revenue."""
    cfg = cfg or SolverConfig()
    n = inst.num_bidders
    params = {"row": list(map(float, np.atleast_1d(fake_row))), "budget": float(fake_budget)}
    r0 = solve_dual(inst, cfg)
    shilled = add_bidder(inst, fake_row, fake_budget)
    r1 = solve_dual(shilled, cfg)
    if not (r0.converged and r1.converged):
        return _skipped("add_shill", params)
    before = _summary(inst, r0)
    after = _summary(shilled, r1)
    real_revenue = float(r1.outcome.spend[:n].sum())
    after["real_revenue"] = real_revenue
    return _record("add_shill", params, before, after,
                   "shill_real_revenue_not_up", before["revenue"] - real_revenue,
                   before["revenue"])


def shill_records(
    inst: MarketInstance, index: int, cfg: SolverConfig | None = None, edit_seed: int = 0
) -> list[StaticsRecord]:
    """One random fake bidder thrown against the instance."""
    rng = np.random.default_rng([edit_seed, index])
    row = rng.random(inst.num_goods)
    budget = float(rng.random() * 2.0 * inst.budgets.mean())
    budget = max(budget, 1e-3 * inst.budgets.mean())
    return [shill_proofness_check(inst, row, budget, cfg)]


def run_shill_suite(
    instances, cfg: SolverConfig | None = None, edit_seed: int = 0
) -> list[StaticsRecord]:
    records = []
    for index, inst in enumerate(instances):
        records.extend(shill_records(inst, index, cfg, edit_seed))
    return records


def failed_assertions(records: list[StaticsRecord]) -> list[StaticsRecord]:
    return [r for r in records if r.converged and r.relation in GUARANTEED_RELATIONS and not r.holds]


def write_records_csv(records: list[StaticsRecord], path) -> None:
    """One CSV row per record; alpha vectors and params serialized as JSON."""
    fields = [
        "edit", "relation", "holds", "slack", "converged",
        "before_revenue", "before_social_welfare", "before_alpha",
        "after_revenue", "after_social_welfare", "after_alpha", "params",
    ]
    num = lambda d, key: repr(float(d[key])) if key in d else ""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for r in records:
            writer.writerow([
                r.edit, r.relation, r.holds, repr(float(r.slack)), r.converged,
                num(r.before, "revenue"), num(r.before, "social_welfare"),
                json.dumps(r.before.get("alpha", [])),
                num(r.after, "revenue"), num(r.after, "social_welfare"),
                json.dumps(r.after.get("alpha", [])),
                json.dumps(r.params, sort_keys=True),
            ])
