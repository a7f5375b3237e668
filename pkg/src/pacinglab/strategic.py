"""Ex-post deviation analysis against a fixed clearing outcome.

With everyone else's paced bids frozen, a bidder faces a reserve price on each
good: the highest competing paced bid. Two deviation families are scored. Per
auction bids: the bidder may shade each bid down to the reserve, so the best
response is a fractional knapsack against the reserves. Single multiplier: the
bidder may rescale all bids at once, winning outright everything priced above
its reserve and paying her own bid, which a sweep over breakpoints and a dense
grid optimizes. The misreport grid instead re-solves the whole market after
scaling the bidder's declared values and budget.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .checks import price_taking_optimum
from .dual import solve_dual
from .market import MarketInstance, PacingOutcome, SolverConfig, generate_complete_graph

U_FLOOR = 1e-9
REGRET_CAP = 10.0
ALPHA_FLOOR = 1e-6
BREAK_EPS = 1e-9
GRID_POINTS = 1000


@dataclass
class RegretRecord:
    bidder: int
    eq_utility: float
    br_utility_bids: float
    br_utility_multiplier: float
    br_multiplier: float
    relative_regret_bids: float
    relative_regret_multiplier: float
    capped_bids: bool = False
    capped_multiplier: bool = False


def reserve_prices(inst: MarketInstance, outcome: PacingOutcome, i: int) -> np.ndarray:
    """Highest competing paced bid on each good (zeros for a lone bidder)."""
    bids = outcome.alpha[:, None] * inst.values
    others = np.delete(bids, i, axis=0)
    if others.shape[0] == 0:
        return np.zeros(inst.num_goods)
    return others.max(axis=0)


def best_response_bids(inst: MarketInstance, outcome: PacingOutcome, i: int) -> float:
    """Best utility from choosing a bid per auction, paying the reserve.

    Exactly the price-taking optimum against the reserve prices: goods worth
    more than their reserve are bought greedily by utility per unit of money,
    goods tied with the reserve add nothing and are skipped, free goods with
    positive value are taken whole.
    """
    r = reserve_prices(inst, outcome, i)
    return price_taking_optimum(inst.values[i], r, float(inst.budgets[i]))


def best_response_multiplier(
    inst: MarketInstance, outcome: PacingOutcome, i: int
) -> tuple[float, float]:
    """Best (multiplier, utility) over single-multiplier deviations.

    At multiplier a the bidder wins outright each good with a * v_ij strictly
    above its reserve and pays her own bid a * v_ij; candidates with total
    spend above the budget are infeasible and dropped, not truncated. The
    supremum may sit just past a reserve breakpoint, hence the two-sided
    epsilon candidates around every breakpoint. Returns (0, 0) when no
    feasible candidate wins anything.
    """
    r = reserve_prices(inst, outcome, i)
    v = inst.values[i]
    budget = float(inst.budgets[i])
    valued = v > 0
    breaks = r[valued] / v[valued]
    cands = np.concatenate([
        np.linspace(ALPHA_FLOOR, 1.0, GRID_POINTS),
        breaks + BREAK_EPS,
        breaks - BREAK_EPS,
        [ALPHA_FLOOR, 1.0],
    ])
    cands = np.unique(np.clip(cands, ALPHA_FLOOR, 1.0))
    wins = cands[:, None] * v[None, :] > r[None, :]
    spend = (cands[:, None] * v[None, :] * wins).sum(axis=1)
    utility = ((1.0 - cands)[:, None] * (v[None, :] * wins)).sum(axis=1)
    utility[spend > budget] = -np.inf
    k = int(np.argmax(utility))
    if utility[k] <= 0.0:
        return 0.0, 0.0
    return float(cands[k]), float(utility[k])


def relative_regret(eq_utility: float, br_utility: float) -> float:
    """Improvement as a fraction of equilibrium utility, floored at 0 and
    capped at REGRET_CAP when the equilibrium utility is at the noise floor."""
    gain = max(0.0, br_utility - eq_utility)
    return min(REGRET_CAP, gain / max(eq_utility, U_FLOOR))


def bidder_regret(inst: MarketInstance, outcome: PacingOutcome, i: int) -> RegretRecord:
    eq = float(outcome.utility[i])
    br_bids = best_response_bids(inst, outcome, i)
    mult, br_mult = best_response_multiplier(inst, outcome, i)
    raw_bids = max(0.0, br_bids - eq) / max(eq, U_FLOOR)
    raw_mult = max(0.0, br_mult - eq) / max(eq, U_FLOOR)
    return RegretRecord(
        bidder=i,
        eq_utility=eq,
        br_utility_bids=br_bids,
        br_utility_multiplier=br_mult,
        br_multiplier=mult,
        relative_regret_bids=relative_regret(eq, br_bids),
        relative_regret_multiplier=relative_regret(eq, br_mult),
        capped_bids=raw_bids > REGRET_CAP,
        capped_multiplier=raw_mult > REGRET_CAP,
    )


def instance_regrets(inst: MarketInstance, outcome: PacingOutcome) -> list[RegretRecord]:
    return [bidder_regret(inst, outcome, i) for i in range(inst.num_bidders)]


def grid_instance_seed(n: int, m: int, seed: int) -> int:
    # spread the (cell, replicate) coordinates into distinct generator seeds
    return seed * 1_000_003 + n * 1_009 + m


def regret_grid(
    bidder_counts, good_counts, num_seeds: int,
    cfg: SolverConfig | None = None, budget_scale: float = 0.5,
) -> list[dict]:
    """Regret rows over the full (bidders, goods, seed) grid, one per bidder.

    Non-converged instances yield a single row flagged converged=False.
    """
    cfg = cfg or SolverConfig()
    rows = []
    for n in bidder_counts:
        for m in good_counts:
            for seed in range(num_seeds):
                inst = generate_complete_graph(n, m, grid_instance_seed(n, m, seed), budget_scale)
                result = solve_dual(inst, cfg)
                base = {"n": n, "m": m, "seed": seed, "converged": result.converged}
                if not result.converged:
                    rows.append(base)
                    continue
                for rec in instance_regrets(inst, result.outcome):
                    rows.append({**base, **rec.__dict__})
    return rows


def write_regret_csv(rows: list[dict], path) -> None:
    fields = [
        "n", "m", "seed", "converged", "bidder", "eq_utility",
        "br_utility_bids", "br_utility_multiplier", "br_multiplier",
        "relative_regret_bids", "relative_regret_multiplier",
        "capped_bids", "capped_multiplier",
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            out = []
            for f in fields:
                val = row.get(f, "")
                out.append(repr(float(val)) if isinstance(val, float) else val)
            writer.writerow(out)


def misreport_grid(
    inst: MarketInstance, bidder: int,
    lambda_values=None, cfg: SolverConfig | None = None,
) -> tuple[list[dict], dict]:
    """Re-solve the market with bidder's declared values scaled by lambda_v
    and budget by lambda_b, scoring her true utility in each misreported
    equilibrium.

    Returns (rows, summary): one row per grid cell with the utility gain over
    truthful reporting, and a summary with the best gain over converged cells
    plus the count of non-converged cells skipped.
    """
    cfg = cfg or SolverConfig()
    if lambda_values is None:
        lambda_values = [k / 10 for k in range(1, 12)]
    truthful = solve_dual(inst, cfg)
    if not truthful.converged:
        raise RuntimeError("truthful instance did not converge; nothing to compare against")
    true_values = inst.values[bidder]
    truthful_utility = float(
        np.sum(truthful.outcome.allocation[bidder] * (true_values - truthful.outcome.prices))
    )

    rows, skipped = [], 0
    best = {"gain": -np.inf}
    for lv in lambda_values:
        for lb in lambda_values:
            values = inst.values.copy()
            values[bidder] = values[bidder] * lv
            budgets = inst.budgets.copy()
            budgets[bidder] = budgets[bidder] * lb
            result = solve_dual(MarketInstance(values, budgets), cfg)
            row = {"lambda_v": lv, "lambda_b": lb, "converged": result.converged}
            if not result.converged:
                skipped += 1
                rows.append(row)
                continue
            utility = float(
                np.sum(result.outcome.allocation[bidder] * (true_values - result.outcome.prices))
            )
            row["true_utility"] = utility
            row["gain"] = utility - truthful_utility
            rows.append(row)
            if row["gain"] > best.get("gain", -np.inf):
                best = {"lambda_v": lv, "lambda_b": lb, "gain": row["gain"]}
    best["truthful_utility"] = truthful_utility
    best["skipped"] = skipped
    return rows, best


def write_misreport_csv(rows: list[dict], path) -> None:
    fields = ["lambda_v", "lambda_b", "converged", "true_utility", "gain"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            out = []
            for f in fields:
                val = row.get(f, "")
                out.append(repr(float(val)) if isinstance(val, float) else val)
            writer.writerow(out)
