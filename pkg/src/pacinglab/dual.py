"""Price-space solver for the paced first-price market.

The market clears at the minimizer of the convex dual

    phi(p) = sum_j p_j - sum_i B_i * log(beta_i(p)),
    beta_i(p) = min(1, min over goods i values of p_j / v_ij),

where beta doubles as the pacing multiplier of bidder i. The solver runs a
projected subgradient descent over the price box and, at checkpoints, tries to
snap the iterate onto the exact tie structure it implies: within a connected
component of tied bids, log-prices and log-multipliers differ by fixed
log-value offsets, so each component has at most one scalar degree of freedom,
pinned either by an unpaced bidder (multiplier 1) or by exact budget
exhaustion. A snapped candidate is accepted only if the recovered outcome
passes the stationarity residuals at tolerance.

Instances whose kink geometry traps the subgradient zigzag are finished off by
an annealed soft-min relaxation of the same dual (see _smoothed_rescue).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .checks import kkt_residuals
from .flows import InfeasibleFlowError, TieGraphError, build_tie_graph, recover_allocation
from .market import MarketInstance, PacingOutcome, SolverConfig, validate_instance

EPS_FLOOR = 1e-12

# subgradient loop schedule
_WARMUP = 40
_CHECK_EVERY = 50
_PATIENCE = 60
_JUMP_EVERY = 5

# backstop tie widths tried when snapping structure (joined by widths read off
# the iterate's own gap spectrum, see _gap_cuts)
_POLISH_LADDER = (1e-7, 1e-5, 1e-3)


@dataclass
class DualPoint:
    """A point of the dual: prices, the rates they imply, and the objective."""

    prices: np.ndarray
    rates: np.ndarray
    objective: float


@dataclass
class SolveResult:
    dual: DualPoint
    alpha: np.ndarray
    outcome: PacingOutcome | None
    converged: bool
    kkt_residual: float
    iterations: int
    status: str
    method: str
    objective_trace: np.ndarray = field(repr=False, default=None)


def price_bounds(inst: MarketInstance) -> tuple[np.ndarray, np.ndarray]:
    """Box known to contain the clearing prices.

    Upper bound: the highest value on the good (multipliers never exceed 1).
    Lower bound: a paced bidder spends her whole budget on goods priced at her
    own scaled values, so alpha_i >= B_i / sum_j v_ij; prices therefore stay
    above that floor times the good's top value. Half of it is used for safety
    margin. Goods nobody values get the degenerate box [0, 0].
    """
    v, b = inst.values, inst.budgets
    upper = v.max(axis=0)
    row_tot = v.sum(axis=1)
    has_values = row_tot > 0
    if has_values.any():
        beta_floor = float(np.min(np.minimum(1.0, b[has_values] / row_tot[has_values])))
    else:
        beta_floor = 1.0
    lower = np.where(upper > 0, np.maximum(EPS_FLOOR, 0.5 * beta_floor * upper), 0.0)
    return lower, upper


def _rate_matrix(inst: MarketInstance, p: np.ndarray) -> np.ndarray:
    """p_j / v_ij with +inf where the bidder has no value for the good."""
    valued = inst.values > 0
    with np.errstate(divide="ignore"):
        return np.where(valued, p[None, :] / np.where(valued, inst.values, 1.0), np.inf)


def rates_from_prices(inst: MarketInstance, p) -> np.ndarray:
    """beta_i(p) = min(1, min over valued goods of p_j / v_ij).

    Bidders valuing nothing get rate 1. Raises ValueError on a nonpositive
    price for a good somebody values (the log term would be undefined).
    """
    p = np.asarray(p, dtype=float)
    valued_good = (inst.values > 0).any(axis=0)
    if np.any(valued_good & (p <= 0)):
        j = int(np.flatnonzero(valued_good & (p <= 0))[0])
        raise ValueError(f"price of valued good {j} must be positive, got {p[j]}")
    ratios = _rate_matrix(inst, p)
    return np.minimum(1.0, ratios.min(axis=1))


def dual_objective(inst: MarketInstance, p) -> float:
    """phi(p); the clearing prices are its minimizer over the price box."""
    p = np.asarray(p, dtype=float)
    beta = rates_from_prices(inst, p)
    return float(p.sum() - inst.budgets @ np.log(beta))


def dual_subgradient(inst: MarketInstance, p) -> np.ndarray:
    """One subgradient of phi at p.

    Component j is 1 minus B_i / p_j summed over bidders whose rate is below 1
    and whose rate-defining good is j; argmin ties go to the lowest good index
    (np.argmin), which keeps runs reproducible.
    """
    p = np.asarray(p, dtype=float)
    rates_from_prices(inst, p)  # domain check
    ratios = _rate_matrix(inst, p)
    g = np.ones(inst.num_goods)
    jstar = np.argmin(ratios, axis=1)
    raw = ratios[np.arange(inst.num_bidders), jstar]
    active = raw < 1.0
    if active.any():
        np.subtract.at(g, jstar[active], inst.budgets[active] / p[jstar[active]])
    return g


def extract_multipliers(point: DualPoint) -> np.ndarray:
    """Pacing multipliers are the dual rates, clamped into [0, 1]."""
    return np.clip(point.rates, 0.0, 1.0)


def recompute_prices(inst: MarketInstance, alpha) -> np.ndarray:
    """First-price rule: each good is priced at the highest paced bid."""
    alpha = np.asarray(alpha, dtype=float)
    return (alpha[:, None] * inst.values).max(axis=0)


def _logsumexp(a: np.ndarray) -> float:
    m = float(a.max())
    return m + float(np.log(np.exp(a - m).sum()))


def _structure_polish(inst: MarketInstance, alpha: np.ndarray, eps: float) -> np.ndarray | None:
    """Snap alpha onto the exact equilibrium consistent with its tie pattern.

    Ties at relative width eps define bidder-good edges with exact relations
    log p_j - log alpha_i = log v_ij. Per connected component the one free
    scalar is pinned by an unpaced member (alpha exactly 1) or, failing that,
    by exact budget exhaustion of the component's paced bidders. Returns None
    when the pattern is inconsistent (wrong structure): mismatched cycles,
    conflicting unpaced pins, a paced multiplier landing at or above 1, or an
    outside bidder overbidding a snapped price.
    """
    cycle_tol = 1e-7
    v, b = inst.values, inst.budgets
    n = inst.num_bidders
    unpaced = alpha >= 1.0 - eps
    work = np.where(unpaced, 1.0, alpha)
    p = recompute_prices(inst, work)
    sold = np.flatnonzero(p > 0)
    if sold.size == 0:
        return np.ones(n)

    # nodes: bidders 0..n-1, sold good k at n+k
    bids = work[:, None] * v
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n + sold.size)]
    for k, j in enumerate(sold):
        for i in np.flatnonzero(bids[:, j] >= (1.0 - eps) * p[j]):
            logv = np.log(v[i, j])
            adj[i].append((n + k, logv))
            adj[n + k].append((i, -logv))

    pot = np.full(n + sold.size, np.nan)
    new_alpha = np.ones(n)
    for root in range(n + sold.size):
        if not np.isnan(pot[root]) or not adj[root]:
            continue
        pot[root] = 0.0
        comp = [root]
        queue = [root]
        while queue:
            node = queue.pop(0)
            for other, offset in adj[node]:
                implied = pot[node] + offset
                if np.isnan(pot[other]):
                    pot[other] = implied
                    comp.append(other)
                    queue.append(other)
                elif abs(pot[other] - implied) > cycle_tol:
                    return None
        comp_bidders = [c for c in comp if c < n]
        comp_goods = [c for c in comp if c >= n]
        pins = [c for c in comp_bidders if unpaced[c]]
        if pins:
            shift = -pot[pins[0]]
            if any(abs(pot[c] + shift) > cycle_tol for c in pins[1:]):
                return None
        else:
            # paced-only component: its goods absorb exactly its budgets
            shift = float(np.log(b[comp_bidders].sum())) - _logsumexp(pot[comp_goods])
        for c in comp_bidders:
            new_alpha[c] = 1.0 if unpaced[c] else float(np.exp(pot[c] + shift))
        for c in comp_goods:
            pot[c] += shift  # now holds log price

    if np.any(new_alpha > 1.0) or np.any(new_alpha <= 0.0):
        return None
    # nobody outside a component may outbid its snapped price
    p_new = recompute_prices(inst, new_alpha)
    for k, j in enumerate(sold):
        snapped = np.exp(pot[n + k])
        if p_new[j] > snapped * (1.0 + 1e-9):
            return None
    return new_alpha


def _gap_cuts(inst: MarketInstance, alpha: np.ndarray, limit: int = 12) -> list[float]:
    """Tie widths suggested by the iterate itself.

    True ties show up as a cluster of tiny relative bid gaps (shrinking as the
    iterate converges) separated from the structural gaps of genuinely losing
    bids. Sorting all observed gaps, including each bidder's distance to
    multiplier 1, and cutting at multiplicative jumps yields tie widths at
    which the pattern can be read off; wrong guesses are rejected downstream,
    so the jump threshold is kept low on purpose.
    """
    p = recompute_prices(inst, alpha)
    bids = alpha[:, None] * inst.values
    sold = p > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = 1.0 - bids[:, sold] / p[sold]
    gaps = np.concatenate([rel.ravel(), 1.0 - alpha])
    gaps = np.sort(gaps[(gaps > 1e-10) & (gaps < 0.25)])
    if gaps.size == 0:
        return []
    cuts = [float(np.sqrt(1e-10 * gaps[0]))]
    for a, b in zip(gaps[:-1], gaps[1:]):
        if b / a > 2.5:
            cuts.append(float(np.sqrt(a * b)))
    return cuts[:limit]


def _evaluate_alpha(inst, alpha, cfg) -> tuple[PacingOutcome | None, float]:
    """Recover the allocation for alpha and score the worst KKT residual."""
    prices = recompute_prices(inst, alpha)
    try:
        tg = build_tie_graph(inst, alpha, prices, cfg.tie_epsilon)
        x = recover_allocation(tg)
    except (TieGraphError, InfeasibleFlowError):
        return None, np.inf
    outcome = PacingOutcome.from_allocation(inst, alpha, x, prices)
    res = max(kkt_residuals(inst, outcome, cfg.tol_kkt).values())
    return outcome, res


def _smoothed_rescue(inst, p_start, cfg, budget):
    """Damped-Newton descent on a soft-min relaxation of the dual, annealed.

    Replacing the hard min in beta with a soft-min at temperature tau makes
    the dual smooth: demand splits fractionally across near-tied goods, which
    removes the kink zigzag that can trap the subgradient loop. Newton steps
    in log-price space absorb the 1/tau stiffness, and the snap machinery is
    tried after every temperature round. Returns (alpha, outcome, residual,
    steps used).
    """
    v, b = inst.values, inst.budgets
    lower, upper = price_bounds(inst)
    active = upper > 0
    qlo, qhi = np.log(lower[active]), np.log(upper[active])
    logv = np.where(
        v[:, active] > 0, np.log(np.where(v[:, active] > 0, v[:, active], 1.0)), -np.inf
    )
    q = np.clip(np.log(p_start[active]), qlo, qhi)

    def fgH(q, tau):
        z = (logv - q[None, :]) / tau
        top = np.maximum(0.0, z.max(axis=1))
        ez = np.exp(z - top[:, None])
        denom = np.exp(-top) + ez.sum(axis=1)
        w = ez / denom[:, None]
        f = np.exp(q).sum() + float(b @ (tau * (top + np.log(denom))))
        g = np.exp(q) - b @ w
        H = np.diag(np.exp(q)) - (w.T * (b / tau)) @ w
        H[np.diag_indices_from(H)] += (b / tau) @ w
        return f, g, H

    best = (None, None, np.inf)
    steps = 0
    for r in range(12):
        tau = 1e-2 * 0.1**r
        f, g, H = fgH(q, tau)
        for _ in range(60):
            if steps >= budget or np.abs(g).max() < 1e-13 * max(1.0, abs(f)):
                break
            steps += 1
            try:
                d = np.linalg.solve(H + 1e-12 * np.eye(q.size), g)
            except np.linalg.LinAlgError:
                d = g
            eta, moved = 1.0, False
            for _ in range(60):
                q_new = np.clip(q - eta * d, qlo, qhi)
                f_new, g_new, H_new = fgH(q_new, tau)
                if f_new <= f - 1e-4 * float(g @ (q - q_new)):
                    moved = not np.array_equal(q_new, q)
                    break
                eta *= 0.5
            if not moved:
                break
            q, f, g, H = q_new, f_new, g_new, H_new
        p = np.zeros(inst.num_goods)
        p[active] = np.exp(q)
        alpha, outcome, res = _attempt(inst, p, cfg)
        if res < best[2]:
            best = (alpha, outcome, res)
        if res <= cfg.tol_kkt or steps >= budget:
            break
    return best[0], best[1], best[2], steps


def _attempt(inst, p, cfg, polish=True):
    """Candidate outcomes from the current prices: snapped structures over a
    ladder of tie widths, then the raw rates. Returns the best
    (alpha, outcome, residual), stopping early once one meets tolerance."""
    alpha0 = np.clip(rates_from_prices(inst, p), 0.0, 1.0)
    candidates = []
    seen = set()
    if polish:
        widths = _gap_cuts(inst, alpha0) + list(_POLISH_LADDER) + [cfg.tie_epsilon]
        for eps in dict.fromkeys(widths):
            snapped = _structure_polish(inst, alpha0, eps)
            if snapped is not None and snapped.tobytes() not in seen:
                seen.add(snapped.tobytes())
                candidates.append(snapped)
    candidates.append(alpha0)

    best = (alpha0, None, np.inf)
    for alpha in candidates:
        outcome, res = _evaluate_alpha(inst, alpha, cfg)
        if res < best[2]:
            best = (alpha, outcome, res)
        if res <= cfg.tol_kkt:
            break
    return best


def _trivial_result(inst: MarketInstance, cfg: SolverConfig, method: str) -> SolveResult:
    n, m = inst.num_bidders, inst.num_goods
    alpha = np.ones(n)
    prices = np.zeros(m)
    outcome = PacingOutcome.from_allocation(inst, alpha, np.zeros((n, m)), prices)
    return SolveResult(
        dual=DualPoint(prices=prices, rates=alpha.copy(), objective=0.0),
        alpha=alpha,
        outcome=outcome,
        converged=True,
        kkt_residual=0.0,
        iterations=0,
        status="converged",
        method=method,
        objective_trace=np.zeros(1),
    )


def solve_dual(inst: MarketInstance, cfg: SolverConfig | None = None) -> SolveResult:
    """Minimize the dual over the price box until the outcome recovered from
    the prices passes every stationarity residual at cfg.tol_kkt.

    Non-convergence is reported in the result (converged=False, status) with
    the best iterate and its residual, never raised. Deterministic for a fixed
    instance and config.
    """
    if cfg is None:
        cfg = SolverConfig()
    violations = validate_instance(inst)
    if violations:
        raise ValueError("invalid instance: " + "; ".join(violations))
    method = f"projected_subgradient[{cfg.step_rule}]+structure_snap"

    lower, upper = price_bounds(inst)
    active = upper > 0
    if not active.any():
        return _trivial_result(inst, cfg, method)

    rng = np.random.default_rng(cfg.seed)
    p = np.zeros(inst.num_goods)
    lo, hi = lower[active], upper[active]
    # start at top values shrunk toward total budget, with seeded log jitter
    start_scale = min(1.0, float(inst.budgets.sum() / hi.sum()))
    p[active] = np.clip(hi * start_scale * np.exp(0.2 * (rng.random(lo.size) - 0.5)), lo, hi)

    f = dual_objective(inst, p)
    best_f, best_p = f, p.copy()
    scale = max(1.0, abs(best_f))
    delta = 0.05 * scale
    delta_min = 1e-13 * scale
    step_len = 0.05 * float(hi.max())
    trace = [best_f]
    review_mark = best_f
    since_review = 0
    boost_streak = 0
    best_alpha, best_outcome, best_res = None, None, np.inf
    iterations = 0
    status = "max_iters"

    for k in range(1, cfg.max_iters + 1):
        iterations = k
        g = dual_subgradient(inst, p)[active]
        gnorm2 = float(g @ g)
        stationary = gnorm2 <= 1e-30
        if not stationary:
            if cfg.step_rule == "adaptive":
                eta = (f - (best_f - delta)) / gnorm2
            elif cfg.step_rule == "fixed":
                eta = step_len / np.sqrt(gnorm2)
            else:  # diminishing
                eta = step_len / (np.sqrt(k) * np.sqrt(gnorm2))
            p[active] = np.clip(p[active] - eta * g, lo, hi)
            f = dual_objective(inst, p)
            if k % _JUMP_EVERY == 0:
                # balance jump: reprice each good at the money it attracts
                gj = dual_subgradient(inst, p)[active]
                p_jump = p.copy()
                p_jump[active] = np.clip(p[active] * (1.0 - gj), lo, hi)
                f_jump = dual_objective(inst, p_jump)
                if f_jump < f:
                    p, f = p_jump, f_jump
        if f < best_f:
            best_f, best_p = f, p.copy()
        trace.append(best_f)

        # periodic review of the target gap: halve it only when progress at
        # the current gap has genuinely dried up, widen it after easy streaks
        refine_exhausted = stationary
        since_review += 1
        if cfg.step_rule == "adaptive" and since_review >= _PATIENCE:
            gained = review_mark - best_f
            if gained < 1e-3 * delta:
                delta *= 0.5
                p = best_p.copy()
                f = best_f
                boost_streak = 0
                if delta < delta_min:
                    refine_exhausted = True
            elif gained > 0.9 * delta:
                boost_streak += 1
                if boost_streak >= 3:
                    delta *= 2.0
                    boost_streak = 0
            else:
                boost_streak = 0
            since_review = 0
            review_mark = best_f

        if (k >= _WARMUP and k % _CHECK_EVERY == 0) or refine_exhausted:
            alpha, outcome, res = _attempt(inst, best_p, cfg)
            if res < best_res:
                best_alpha, best_outcome, best_res = alpha, outcome, res
            if best_res <= cfg.tol_kkt:
                status = "converged"
                break
            if refine_exhausted:
                status = "stalled"
                break

    if best_res > cfg.tol_kkt and iterations < cfg.max_iters:
        # the subgradient loop gave up with budget to spare: anneal the
        # smoothed dual from the incumbent to resolve leftover tie kinks
        alpha, outcome, res, used = _smoothed_rescue(
            inst, best_p, cfg, cfg.max_iters - iterations
        )
        iterations += used
        if res < best_res:
            best_alpha, best_outcome, best_res = alpha, outcome, res
        if best_res <= cfg.tol_kkt:
            status = "converged"

    if best_alpha is None or best_res > cfg.tol_kkt:
        # wrap up from the best iterate without structure snapping
        alpha = np.clip(rates_from_prices(inst, best_p), 0.0, 1.0)
        outcome, res = _evaluate_alpha(inst, alpha, cfg)
        if res < best_res:
            best_alpha, best_outcome, best_res = alpha, outcome, res

    converged = best_res <= cfg.tol_kkt
    if converged:
        status = "converged"
        prices = recompute_prices(inst, best_alpha)
    else:
        prices = best_p
    dual = DualPoint(
        prices=prices,
        rates=rates_from_prices(inst, prices),
        objective=dual_objective(inst, prices),
    )
    return SolveResult(
        dual=dual,
        alpha=best_alpha,
        outcome=best_outcome,
        converged=converged,
        kkt_residual=float(best_res),
        iterations=iterations,
        status=status,
        method=method,
        objective_trace=np.asarray(trace),
    )
