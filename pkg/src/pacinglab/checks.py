"""Residual-style verification of pacing outcomes.

Every equilibrium condition is scored as a nonnegative violation magnitude
instead of a boolean, so finite-precision outcomes can be judged against an
explicit tolerance and near-misses stay auditable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import MarketInstance, PacingOutcome

# alpha within one part in 1e12 of 1 counts as "unpaced exactly"
UNPACED_SNAP = 1e-12

BFPM_CONDITIONS = ("prices", "highest_bidders", "budget", "full_sale", "no_overselling")
KKT_CONDITIONS = (
    "utility_matches_rate",
    "rate_at_most_one",
    "rate_undercuts_prices",
    "nonnegative_vars",
    "priced_goods_sold_out",
    "slack_implies_unit_rate",
    "purchases_at_rate",
)


def _max0(values) -> float:
    arr = np.asarray(values, dtype=float)
    return float(arr.max()) if arr.size else 0.0


def check_bfpm(inst: MarketInstance, outcome: PacingOutcome, tol: float = 1e-6) -> dict:
    """Residuals for the five budget-feasible pacing conditions.

    prices: gap between stated prices and the max paced bid (plus any alpha
    outside [0, 1]); highest_bidders: worst bid gap on an allocated pair;
    budget: worst overspend; full_sale: worst under/over sale of a priced
    good; no_overselling: oversold goods and allocation entries outside [0, 1].
    """
    v, b = inst.values, inst.budgets
    alpha, x, p = outcome.alpha, outcome.allocation, outcome.prices
    bids = alpha[:, None] * v
    top_bid = bids.max(axis=0) if inst.num_bidders else np.zeros(inst.num_goods)

    prices = max(
        _max0(np.abs(p - top_bid)),
        _max0(alpha - 1.0),
        _max0(-alpha),
    )
    supported = x > tol
    highest = _max0((top_bid[None, :] - bids) * supported)
    spend = x @ p
    budget = _max0(spend - b)
    sold_mask = p > tol
    col_sums = x.sum(axis=0)
    full_sale = _max0(np.abs(col_sums - 1.0) * sold_mask)
    no_overselling = max(_max0(col_sums - 1.0), _max0(x - 1.0), _max0(-x))
    return {
        "prices": prices,
        "highest_bidders": highest,
        "budget": budget,
        "full_sale": full_sale,
        "no_overselling": no_overselling,
    }


def check_fppe(inst: MarketInstance, outcome: PacingOutcome, tol: float = 1e-6) -> float:
    """Worst unnecessary-pacing slack: positive iff some bidder is paced below
    1 while leaving part of her budget unspent (relative to the budget)."""
    spend = outcome.allocation @ outcome.prices
    slack = (inst.budgets - spend) / inst.budgets
    return _max0(np.minimum(1.0 - outcome.alpha, slack))


def price_taking_optimum(values: np.ndarray, prices: np.ndarray, budget: float) -> float:
    """Best utility a price-taking bidder can buy: max sum x(v - p) subject to
    sum x p <= budget, 0 <= x <= 1.

    Free goods with positive value are taken whole; the rest are bought
    greedily by utility per unit of money, splitting the last one.
    """
    utility = 0.0
    free = (prices <= 0) & (values > 0)
    utility += float(values[free].sum())
    buyable = np.flatnonzero((prices > 0) & (values > prices))
    if buyable.size == 0:
        return utility
    rate = (values[buyable] - prices[buyable]) / prices[buyable]
    order = buyable[np.argsort(-rate, kind="stable")]
    remaining = budget
    for j in order:
        if remaining <= 0:
            break
        take = min(1.0, remaining / prices[j])
        utility += take * (values[j] - prices[j])
        remaining -= take * prices[j]
    return utility


def check_erce(
    inst: MarketInstance, outcome: PacingOutcome, tol: float = 1e-6
) -> tuple[float, float]:
    """Equal-rates competitive-equilibrium gaps.

    Returns (demand gap, rate gap). The demand gap is the worst shortfall of a
    bidder's realized utility against her best affordable bundle at the given
    prices. The rate gap is the worst deviation of value-per-price on a
    purchased good from the bidder's rate, which is 1/alpha_i for a bidder who
    spent her budget and 1 for a bidder with money left over.
    """
    x, p, alpha = outcome.allocation, outcome.prices, outcome.alpha
    demand_gap = 0.0
    for i in range(inst.num_bidders):
        best = price_taking_optimum(inst.values[i], p, inst.budgets[i])
        demand_gap = max(demand_gap, best - outcome.utility[i])

    spend = x @ p
    unspent = spend < inst.budgets - tol * np.maximum(1.0, inst.budgets)
    with np.errstate(divide="ignore"):
        target = np.where(unspent, 1.0, np.where(alpha > 0, 1.0 / alpha, np.inf))
    rate_gap = 0.0
    for i, j in np.argwhere(x > tol):
        if p[j] <= 0:
            if inst.values[i, j] > 0:
                rate_gap = np.inf
            continue
        rate_gap = max(rate_gap, abs(inst.values[i, j] / p[j] - target[i]))
    return demand_gap, float(rate_gap)


def kkt_residuals(inst: MarketInstance, outcome: PacingOutcome, tol: float = 1e-6) -> dict:
    """Residuals of the seven stationarity conditions of the underlying
    convex program, with beta taken equal to alpha.

    Leftover budget is reconstructed as B_i - spend_i for bidders at alpha 1
    and as zero otherwise, and the utility level as allocated value plus
    leftover (at least B_i), so the checks need nothing beyond the outcome.
    """
    v, b = inst.values, inst.budgets
    beta, x, p = outcome.alpha, outcome.allocation, outcome.prices
    spend = x @ p
    unpaced = beta >= 1.0 - UNPACED_SNAP
    delta = np.where(unpaced, b - spend, 0.0)
    value_won = np.sum(x * v, axis=1)
    u = np.maximum(b, value_won + delta)

    with np.errstate(divide="ignore"):
        level = np.where(beta > 0, b / beta, np.inf)
    r1 = _max0(np.abs(u - level))
    r2 = _max0(beta - 1.0)

    valued = v > 0
    with np.errstate(divide="ignore"):
        price_rate = np.where(valued, p[None, :] / np.where(valued, v, 1.0), np.inf)
    r3 = _max0(np.where(valued, beta[:, None] - price_rate, 0.0))
    r4 = max(_max0(-x), _max0(-delta), _max0(-beta), _max0(-p))
    sold = p > tol
    r5 = _max0(np.abs(x.sum(axis=0) - 1.0) * sold)
    r6 = _max0(np.abs(beta - 1.0) * (delta > tol))
    supported = (x > tol) & valued
    r7 = _max0(np.where(supported, np.abs(beta[:, None] - price_rate), 0.0))
    return dict(zip(KKT_CONDITIONS, (r1, r2, r3, r4, r5, r6, r7)))


def metrics(inst: MarketInstance, outcome: PacingOutcome) -> dict:
    """Market summary: revenue, social welfare, paced welfare, per-bidder
    utilities and bang per buck (1/alpha)."""
    spend = outcome.allocation @ outcome.prices
    value_won = np.sum(outcome.allocation * inst.values, axis=1)
    with np.errstate(divide="ignore"):
        bang = np.where(outcome.alpha > 0, 1.0 / outcome.alpha, np.inf)
    return {
        "revenue": float(spend.sum()),
        "social_welfare": float(value_won.sum()),
        "paced_welfare": float(np.sum(outcome.alpha * value_won)),
        "utilities": outcome.utility.copy(),
        "bang_per_buck": bang,
    }


@dataclass
class EquilibriumReport:
    """All residuals and market metrics for one outcome, every residual >= 0."""

    bfpm: dict
    fppe: float
    erce_demand_gap: float
    erce_rate_gap: float
    kkt: dict
    revenue: float
    social_welfare: float
    paced_welfare: float

    def max_residual(self) -> float:
        return max(
            max(self.bfpm.values()),
            self.fppe,
            self.erce_demand_gap,
            self.erce_rate_gap,
            max(self.kkt.values()),
        )

    def max_kkt_residual(self) -> float:
        return max(self.kkt.values())

    def flat(self) -> dict:
        """Flatten to key -> number for CSV emission."""
        out = {f"bfpm_{k}": v for k, v in self.bfpm.items()}
        out["fppe"] = self.fppe
        out["erce_demand_gap"] = self.erce_demand_gap
        out["erce_rate_gap"] = self.erce_rate_gap
        out.update({f"kkt_{k}": v for k, v in self.kkt.items()})
        out["revenue"] = self.revenue
        out["social_welfare"] = self.social_welfare
        out["paced_welfare"] = self.paced_welfare
        return out


def certify(inst: MarketInstance, outcome: PacingOutcome, tol: float = 1e-6) -> EquilibriumReport:
    """Run every check and assemble the report (residuals clipped at 0)."""
    clip = lambda r: max(0.0, float(r))
    bfpm = {k: clip(r) for k, r in check_bfpm(inst, outcome, tol).items()}
    fppe = clip(check_fppe(inst, outcome, tol))
    demand_gap, rate_gap = check_erce(inst, outcome, tol)
    kkt = {k: clip(r) for k, r in kkt_residuals(inst, outcome, tol).items()}
    m = metrics(inst, outcome)
    return EquilibriumReport(
        bfpm=bfpm,
        fppe=fppe,
        erce_demand_gap=clip(demand_gap),
        erce_rate_gap=clip(rate_gap),
        kkt=kkt,
        revenue=m["revenue"],
        social_welfare=m["social_welfare"],
        paced_welfare=m["paced_welfare"],
    )
