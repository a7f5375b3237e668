import itertools

import numpy as np
import pytest

from pacinglab.dual import recompute_prices, solve_dual
from pacinglab.flows import (
    FlowNetwork,
    InfeasibleFlowError,
    TieGraphError,
    build_tie_graph,
    max_flow,
    recover_allocation,
)
from pacinglab.market import MarketInstance, SolverConfig

from conftest import random_instances


def brute_force_min_cut(num_nodes, edges, s, t):
    """Independent oracle: enumerate all s-t cuts and take the cheapest."""
    others = [v for v in range(num_nodes) if v not in (s, t)]
    best = np.inf
    for r in range(len(others) + 1):
        for side in itertools.combinations(others, r):
            S = set(side) | {s}
            cut = sum(c for (u, v, c) in edges if u in S and v not in S)
            best = min(best, cut)
    return best


class TestMaxFlow:
    def test_single_edge(self):
        net = FlowNetwork(2)
        net.add_edge(0, 1, 5.0)
        value, flows = max_flow(net, 0, 1)
        assert value == 5.0
        assert flows == [5.0]

    def test_two_parallel_paths(self):
        net = FlowNetwork(4)
        net.add_edge(0, 1, 3.0)
        net.add_edge(1, 3, 3.0)
        net.add_edge(0, 2, 4.0)
        net.add_edge(2, 3, 4.0)
        value, _ = max_flow(net, 0, 3)
        assert value == 7.0

    def test_matches_min_cut_on_small_random_graphs(self):
        rng = np.random.default_rng(9)
        for trial in range(60):
            num_nodes = int(rng.integers(3, 7))
            edges = []
            for u in range(num_nodes):
                for v in range(num_nodes):
                    if u != v and rng.random() < 0.5:
                        edges.append((u, v, float(np.round(rng.random() * 10, 3))))
            net = FlowNetwork(num_nodes)
            for u, v, c in edges:
                net.add_edge(u, v, c)
            value, _ = max_flow(net, 0, num_nodes - 1)
            expected = brute_force_min_cut(num_nodes, edges, 0, num_nodes - 1)
            assert value == pytest.approx(expected, abs=1e-9)

    def test_negative_capacity_rejected(self):
        net = FlowNetwork(2)
        with pytest.raises(ValueError):
            net.add_edge(0, 1, -1.0)


class TestTieGraph:
    def test_value_increase_bumped_structure(self, fx):
        inst = fx("value_increase_bumped")
        alpha = np.array([0.5, 1.0])
        prices = recompute_prices(inst, alpha)
        tg = build_tie_graph(inst, alpha, prices, 1e-6)
        assert list(tg.sold_goods) == [0, 1]
        assert list(tg.winners[0]) == [0]
        assert list(tg.winners[1]) == [0, 1]
        assert list(tg.paced) == [True, False]

    def test_lone_bidder_structure(self):
        inst = MarketInstance([[10.0]], [1.0])
        tg = build_tie_graph(inst, [0.1], [1.0], 1e-6)
        assert list(tg.winners[0]) == [0]
        assert list(tg.paced) == [True]

    def test_zero_values_empty(self, fx):
        inst = fx("zero_values")
        tg = build_tie_graph(inst, [1.0], [0.0, 0.0], 1e-6)
        assert tg.sold_goods.size == 0
        assert recover_allocation(tg) == pytest.approx(np.zeros((1, 2)))

    def test_price_without_winner_rejected(self):
        inst = MarketInstance([[10.0]], [1.0])
        with pytest.raises(TieGraphError, match="no bid"):
            build_tie_graph(inst, [0.1], [2.0], 1e-6)

    def test_bid_above_price_rejected(self):
        inst = MarketInstance([[10.0]], [1.0])
        with pytest.raises(TieGraphError, match="exceeds"):
            build_tie_graph(inst, [0.1], [0.5], 1e-6)


class TestRecoverAllocation:
    def test_paced_bidder_takes_tied_good(self, fx):
        # the paced bidder must exhaust her budget, so the tied good goes to her
        inst = fx("value_increase_bumped")
        alpha = np.array([0.5, 1.0])
        prices = recompute_prices(inst, alpha)
        x = recover_allocation(build_tie_graph(inst, alpha, prices, 1e-6))
        assert x[0] == pytest.approx([1.0, 1.0], abs=1e-12)
        assert x[1] == pytest.approx([0.0, 0.0], abs=1e-12)
        assert x @ prices == pytest.approx([10.0, 0.0], abs=1e-9)

    def test_even_tie_split(self, fx):
        inst = fx("crowded_entry")
        alpha = np.array([0.2, 1.0])
        prices = recompute_prices(inst, alpha)
        x = recover_allocation(build_tie_graph(inst, alpha, prices, 1e-6))
        assert x[:, 0] == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_quarter_split(self, fx):
        inst = fx("budget_mismatch_bumped")
        alpha = np.array([0.2, 1.0])
        prices = recompute_prices(inst, alpha)
        x = recover_allocation(build_tie_graph(inst, alpha, prices, 1e-6))
        assert x[:, 0] == pytest.approx([0.25, 0.75], abs=1e-12)

    def test_infeasible_demand_raises(self):
        # paced bidder must spend 5 but the only good collects 1
        inst = MarketInstance([[10.0]], [5.0])
        tg = build_tie_graph(inst, [0.1], [1.0], 1e-6)
        with pytest.raises(InfeasibleFlowError):
            recover_allocation(tg)

    def test_flow_determinism(self, cfg):
        inst = random_instances(1, seed0=4000)[0]
        result = solve_dual(inst, cfg)
        prices = recompute_prices(inst, result.alpha)
        tg1 = build_tie_graph(inst, result.alpha, prices, cfg.tie_epsilon)
        tg2 = build_tie_graph(inst, result.alpha, prices, cfg.tie_epsilon)
        x1, x2 = recover_allocation(tg1), recover_allocation(tg2)
        assert x1.tobytes() == x2.tobytes()


class TestFlowInvariants:
    def test_solved_instances(self, cfg):
        for inst in random_instances(10, seed0=4100):
            result = solve_dual(inst, cfg)
            assert result.converged
            x, p = result.outcome.allocation, result.outcome.prices
            spend = x @ p
            tol = 1e-6 * inst.budgets.sum()
            # money conservation
            assert spend.sum() == pytest.approx(p.sum(), abs=tol)
            # paced bidders spend exactly their budget
            paced = result.alpha < 1.0 - cfg.tie_epsilon
            assert np.all(np.abs(spend[paced] - inst.budgets[paced]) <= tol)
            # support only on tied winning bids
            bids = result.alpha[:, None] * inst.values
            winners = bids >= (1.0 - cfg.tie_epsilon) * p[None, :]
            assert np.all(winners[x > 0])
            # positively priced goods sell out, nothing oversells
            sold = p > 0
            assert np.all(np.abs(x.sum(axis=0)[sold] - 1.0) <= tol)
            assert np.all(x.sum(axis=0) <= 1.0 + tol)
