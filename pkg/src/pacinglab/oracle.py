"""Brute-force ground truth for small markets.

Minimizes the same dual objective as the main solver, but by nested grid
search over the price box: evaluate everywhere, recenter a shrunken box on the
best point, repeat. Exponential in the number of goods, so it refuses more
than three.
"""

from __future__ import annotations

import numpy as np

from .dual import DualPoint, dual_objective, extract_multipliers, price_bounds, rates_from_prices, solve_dual
from .market import MarketInstance, SolverConfig

MAX_ORACLE_GOODS = 3


def _objective_grid(inst: MarketInstance, pts: np.ndarray, active: np.ndarray) -> np.ndarray:
    """dual_objective evaluated on a (k, num_active) batch of price vectors."""
    v = inst.values[:, active]
    valued = v > 0
    with np.errstate(divide="ignore"):
        ratios = np.where(valued[None, :, :], pts[:, None, :] / np.where(valued, v, 1.0), np.inf)
    beta = np.minimum(1.0, ratios.min(axis=2))
    return pts.sum(axis=1) - np.log(beta) @ inst.budgets


def oracle_solve(
    inst: MarketInstance,
    levels: int = 8,
    points_per_axis: int = 25,
    shrink: float = 4.0,
    return_trace: bool = False,
):
    """Grid-refinement minimizer of the dual; returns a DualPoint.

    Exact ties on the grid resolve to the lowest flat index, so results are
    deterministic. With return_trace=True also returns the best objective
    after each refinement level (a nonincreasing sequence).
    """
    lower, upper = price_bounds(inst)
    active = upper > 0
    n_active = int(active.sum())
    if n_active > MAX_ORACLE_GOODS:
        raise ValueError(
            f"grid oracle is exponential in goods; {n_active} valued goods exceed "
            f"the limit of {MAX_ORACLE_GOODS}"
        )
    if n_active == 0:
        point = DualPoint(
            prices=np.zeros(inst.num_goods),
            rates=np.ones(inst.num_bidders),
            objective=0.0,
        )
        return (point, [0.0]) if return_trace else point

    lo, hi = lower[active], upper[active]
    center = (lo + hi) / 2.0
    width = hi - lo
    best_p, best_f = None, np.inf
    trace = []
    for _ in range(levels):
        half = width / 2.0
        box_lo = np.clip(center - half, lo, np.maximum(lo, hi - width))
        axes = [np.linspace(box_lo[d], box_lo[d] + width[d], points_per_axis) for d in range(n_active)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = _objective_grid(inst, pts, active)
        k = int(np.argmin(vals))
        if vals[k] < best_f:
            best_f = float(vals[k])
            best_p = pts[k].copy()
        trace.append(best_f)
        center = best_p
        width = width / shrink

    prices = np.zeros(inst.num_goods)
    prices[active] = best_p
    point = DualPoint(
        prices=prices,
        rates=rates_from_prices(inst, prices),
        objective=dual_objective(inst, prices),
    )
    return (point, trace) if return_trace else point


def compare_solver_oracle(
    inst: MarketInstance,
    cfg: SolverConfig | None = None,
    levels: int = 14,
    points_per_axis: int = 25,
) -> dict:
    """Sup-norm multiplier gap and dual objective gap between the main solver
    and the grid oracle. The deeper-than-default refinement keeps the oracle's
    own grid error well below the gaps being measured."""
    result = solve_dual(inst, cfg or SolverConfig())
    point = oracle_solve(inst, levels=levels, points_per_axis=points_per_axis)
    alpha_gap = float(np.abs(result.alpha - extract_multipliers(point)).max())
    objective_gap = abs(result.dual.objective - point.objective)
    return {
        "alpha_gap": alpha_gap,
        "objective_gap": float(objective_gap),
        "converged": result.converged,
    }
