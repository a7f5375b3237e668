import numpy as np
import pytest

from pacinglab.checks import kkt_residuals
from pacinglab.dual import (
    DualPoint,
    dual_objective,
    dual_subgradient,
    extract_multipliers,
    price_bounds,
    rates_from_prices,
    recompute_prices,
    solve_dual,
)
from pacinglab.market import MarketInstance, SolverConfig, generate_complete_graph

from conftest import random_instances


def box_sample(inst, rng):
    lower, upper = price_bounds(inst)
    active = upper > 0
    p = np.zeros(inst.num_goods)
    lo, hi = lower[active], upper[active]
    p[active] = lo * (hi / lo) ** rng.random(lo.size)
    return p


class TestDualObjective:
    def test_single_paced_bidder(self):
        inst = MarketInstance([[10.0]], [1.0])
        # beta = 1/10, objective = 1 - 1 * log(1/10)
        assert dual_objective(inst, [1.0]) == pytest.approx(3.302585092994046, abs=1e-12)

    def test_single_unpaced_bidder(self):
        inst = MarketInstance([[1.0]], [10.0])
        assert dual_objective(inst, [1.0]) == pytest.approx(1.0, abs=0)

    def test_two_bidder_two_good(self, fx):
        inst = fx("value_increase_base")
        assert dual_objective(inst, [10.0, 5.0]) == pytest.approx(15.0, abs=1e-12)
        assert np.allclose(rates_from_prices(inst, [10.0, 5.0]), [1.0, 1.0])

    def test_nonpositive_price_on_valued_good(self):
        inst = MarketInstance([[10.0]], [1.0])
        with pytest.raises(ValueError, match="price of valued good 0"):
            dual_objective(inst, [0.0])

    def test_zero_price_fine_on_unvalued_good(self):
        inst = MarketInstance([[10.0, 0.0]], [1.0])
        assert dual_objective(inst, [1.0, 0.0]) == pytest.approx(3.302585092994046)

    def test_all_zero_bidder_gets_rate_one(self):
        inst = MarketInstance([[10.0], [0.0]], [1.0, 5.0])
        assert np.allclose(rates_from_prices(inst, [1.0]), [0.1, 1.0])


class TestSubgradient:
    def test_stationary_at_optimum(self):
        inst = MarketInstance([[10.0]], [1.0])
        assert dual_subgradient(inst, [1.0]) == pytest.approx([0.0])

    def test_clipped_rate_drops_budget_term(self):
        inst = MarketInstance([[1.0]], [10.0])
        assert dual_subgradient(inst, [2.0]) == pytest.approx([1.0])

    def test_matches_finite_differences_away_from_kinks(self):
        rng = np.random.default_rng(0)
        checked = 0
        for inst in random_instances(12, seed0=400):
            p = box_sample(inst, rng)
            ratios = np.sort(
                np.where(inst.values > 0, p[None, :] / np.where(inst.values > 0, inst.values, 1), np.inf),
                axis=1,
            )
            best, second = ratios[:, 0], ratios[:, 1] if ratios.shape[1] > 1 else np.inf
            near_kink = np.any(np.abs(best - 1.0) < 1e-4) or np.any(
                (second - best) < 1e-4 * np.maximum(best, 1e-12)
            )
            if near_kink:
                continue
            g = dual_subgradient(inst, p)
            for j in range(inst.num_goods):
                h = 1e-6 * max(1.0, p[j])
                e = np.zeros_like(p)
                e[j] = h
                fd = (dual_objective(inst, p + e) - dual_objective(inst, p - e)) / (2 * h)
                assert fd == pytest.approx(g[j], abs=1e-4 * (1 + abs(g[j])))
            checked += 1
        assert checked >= 5

    def test_subgradient_inequality(self):
        rng = np.random.default_rng(1)
        for inst in random_instances(10, seed0=500):
            p = box_sample(inst, rng)
            q = box_sample(inst, rng)
            g = dual_subgradient(inst, p)
            lhs = dual_objective(inst, q)
            rhs = dual_objective(inst, p) + g @ (q - p)
            assert lhs >= rhs - 1e-9 * max(1.0, abs(lhs))

    def test_convexity_probe(self):
        rng = np.random.default_rng(2)
        for inst in random_instances(10, seed0=600):
            p = box_sample(inst, rng)
            q = box_sample(inst, rng)
            fp, fq = dual_objective(inst, p), dual_objective(inst, q)
            for t in (0.0, 0.25, 0.5, 0.75, 1.0):
                mid = dual_objective(inst, t * p + (1 - t) * q)
                assert mid <= t * fp + (1 - t) * fq + 1e-9 * max(1.0, abs(fp) + abs(fq))


class TestSolve:
    def test_lone_bidder(self, cfg):
        result = solve_dual(MarketInstance([[10.0]], [1.0]), cfg)
        assert result.converged
        assert result.alpha == pytest.approx([0.1], abs=1e-9)
        assert result.dual.prices == pytest.approx([1.0], abs=1e-9)

    def test_crowded_entry(self, fx, cfg):
        result = solve_dual(fx("crowded_entry"), cfg)
        assert result.converged
        assert result.alpha == pytest.approx([0.2, 1.0], abs=1e-9)
        assert result.dual.prices == pytest.approx([2.0], abs=1e-9)

    def test_value_increase_pair(self, fx, cfg):
        base = solve_dual(fx("value_increase_base"), cfg)
        assert base.alpha == pytest.approx([1.0, 1.0], abs=1e-9)
        assert base.dual.prices == pytest.approx([10.0, 5.0], abs=1e-9)
        bumped = solve_dual(fx("value_increase_bumped"), cfg)
        assert bumped.alpha == pytest.approx([0.5, 1.0], abs=1e-9)
        assert bumped.dual.prices == pytest.approx([5.0, 5.0], abs=1e-9)

    def test_price_floor_does_not_exclude_optimum(self):
        # one bidder forced to buy both goods: alpha = B / sum(v) = 0.25
        result = solve_dual(MarketInstance([[1.0, 1.0]], [0.5]), SolverConfig())
        assert result.converged
        assert result.alpha == pytest.approx([0.25], abs=1e-9)

    def test_zero_values_instance(self, fx, cfg):
        result = solve_dual(fx("zero_values"), cfg)
        assert result.converged
        assert np.all(result.dual.prices == 0)
        assert result.alpha == pytest.approx([1.0])
        assert result.outcome.spend == pytest.approx([0.0])

    def test_invalid_instance_rejected(self, cfg):
        with pytest.raises(ValueError, match="invalid instance"):
            solve_dual(MarketInstance([[1.0]], [0.0]), cfg)

    def test_monotone_best_objective_trace(self, cfg):
        inst = generate_complete_graph(5, 8, seed=77)
        result = solve_dual(inst, cfg)
        trace = result.objective_trace
        assert np.all(np.diff(trace) <= 0)

    def test_no_bidder_outbids_price(self, cfg):
        for inst in random_instances(8, seed0=700):
            result = solve_dual(inst, cfg)
            assert result.converged
            bids = result.alpha[:, None] * inst.values
            assert np.all(bids <= result.dual.prices[None, :] + 1e-9)

    def test_deterministic_given_config(self, cfg):
        inst = generate_complete_graph(6, 9, seed=13)
        a = solve_dual(inst, cfg)
        b = solve_dual(inst, cfg)
        assert a.alpha.tobytes() == b.alpha.tobytes()
        assert a.outcome.allocation.tobytes() == b.outcome.allocation.tobytes()
        assert a.iterations == b.iterations

    def test_max_iters_one_reports_failure(self, fx):
        result = solve_dual(fx("crowded_entry"), SolverConfig(max_iters=1))
        assert not result.converged
        assert result.status != "converged"
        assert result.kkt_residual > 1e-6

    def test_solver_output_passes_kkt(self, cfg):
        for inst in random_instances(6, seed0=800):
            result = solve_dual(inst, cfg)
            residuals = kkt_residuals(inst, result.outcome, cfg.tol_kkt)
            assert max(residuals.values()) <= cfg.tol_kkt


class TestPointOps:
    def test_extract_multipliers_identity_and_clamp(self):
        point = DualPoint(prices=np.array([1.0]), rates=np.array([0.5, 1.0]), objective=0.0)
        assert extract_multipliers(point) == pytest.approx([0.5, 1.0])
        point = DualPoint(prices=np.array([1.0]), rates=np.array([1.0 + 1e-12]), objective=0.0)
        assert extract_multipliers(point)[0] == 1.0

    def test_extract_from_solved_lone_bidder(self, cfg):
        result = solve_dual(MarketInstance([[10.0]], [1.0]), cfg)
        assert extract_multipliers(result.dual) == pytest.approx([0.1], abs=1e-9)

    def test_recompute_prices(self, fx):
        bumped = fx("value_increase_bumped")
        assert recompute_prices(bumped, [0.5, 1.0]) == pytest.approx([5.0, 5.0], abs=0)
        assert recompute_prices(bumped, [0.0, 0.0]) == pytest.approx([0.0, 0.0], abs=0)
        inst = MarketInstance([[3.0, 7.0]], [1.0])
        assert recompute_prices(inst, [1.0]) == pytest.approx([3.0, 7.0], abs=0)
