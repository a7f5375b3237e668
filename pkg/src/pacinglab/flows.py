"""Allocation recovery: turn multipliers and prices into an exact fractional
allocation by routing money through the graph of tied winning bids.

Each sold good j needs exactly p_j units of money routed to it from bidders
tied for the winning bid; bidders paced below 1 must route exactly their whole
budget. That is a feasible-flow problem with lower bounds, reduced here to a
plain max-flow via the usual super-source / super-sink construction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .market import MarketInstance


class TieGraphError(ValueError):
    """Prices passed in are inconsistent with the bids implied by alpha."""


class InfeasibleFlowError(RuntimeError):
    """The money demands cannot be routed; the dual point is not tight enough."""

    def __init__(self, deficit: float, tol: float):
        super().__init__(
            f"residual money demand {deficit:.3e} exceeds feasibility tolerance {tol:.3e}"
        )
        self.deficit = deficit
        self.tol = tol


@dataclass
class TieGraph:
    """Winner sets and money constraints for one (alpha, prices) pair.

    winners[k] lists the bidders tied for sold good sold_goods[k]; supplies
    holds the money each sold good must collect (its price); capacities holds
    each bidder's budget; paced flags bidders that must spend it all.
    """

    num_bidders: int
    num_goods: int
    sold_goods: np.ndarray
    winners: list[np.ndarray]
    paced: np.ndarray
    supplies: np.ndarray
    capacities: np.ndarray


def build_tie_graph(
    inst: MarketInstance, alpha, prices, tie_epsilon: float = 1e-6
) -> TieGraph:
    """Collect, for every positively priced good, the bidders whose paced bid
    is within a relative tie_epsilon of the price.

    Raises TieGraphError if a positively priced good has no winner or some bid
    exceeds its price beyond tolerance, both of which mean `prices` does not
    match `alpha`.
    """
    alpha = np.asarray(alpha, dtype=float)
    prices = np.asarray(prices, dtype=float)
    bids = alpha[:, None] * inst.values
    sold = np.flatnonzero(prices > 0)
    winners = []
    for j in sold:
        w = np.flatnonzero(bids[:, j] >= (1.0 - tie_epsilon) * prices[j])
        if w.size == 0:
            raise TieGraphError(
                f"good {j} has price {prices[j]} but no bid within tolerance"
            )
        if np.any(bids[w, j] > prices[j] * (1.0 + tie_epsilon)):
            raise TieGraphError(
                f"good {j}: some bid exceeds its price {prices[j]} beyond tolerance"
            )
        winners.append(w)
    return TieGraph(
        num_bidders=inst.num_bidders,
        num_goods=inst.num_goods,
        sold_goods=sold,
        winners=winners,
        paced=alpha < 1.0 - tie_epsilon,
        supplies=prices.copy(),
        capacities=inst.budgets.copy(),
    )


class FlowNetwork:
    """Capacitated digraph with a deterministic Edmonds-Karp max flow.

    Edges are kept in insertion order and BFS scans them in that order, so the
    same construction sequence always yields the same flow.
    """

    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        self.head: list[int] = []
        self.cap: list[float] = []
        self.adj: list[list[int]] = [[] for _ in range(num_nodes)]

    def add_edge(self, u: int, v: int, capacity: float) -> int:
        """Add a directed edge and its zero-capacity reverse; returns the edge id."""
        if capacity < 0:
            raise ValueError(f"negative capacity {capacity} on edge {u}->{v}")
        eid = len(self.head)
        self.head.append(v)
        self.cap.append(float(capacity))
        self.adj[u].append(eid)
        self.head.append(u)
        self.cap.append(0.0)
        self.adj[v].append(eid + 1)
        return eid

    def flow_on(self, eid: int) -> float:
        """Flow currently routed on edge eid (capacity moved to its reverse)."""
        return self.cap[eid ^ 1]

    def max_flow(self, s: int, t: int) -> float:
        """Run Edmonds-Karp from s to t; returns the flow value.

        Residual capacities below a tiny threshold (relative to the largest
        capacity) are treated as zero so float dust cannot create endless
        augmenting paths.
        """
        eps = 1e-15 * max(1.0, max(self.cap, default=0.0))
        total = 0.0
        while True:
            parent_edge = [-1] * self.num_nodes
            parent_edge[s] = -2
            queue = deque([s])
            while queue and parent_edge[t] == -1:
                u = queue.popleft()
                for eid in self.adj[u]:
                    v = self.head[eid]
                    if parent_edge[v] == -1 and self.cap[eid] > eps:
                        parent_edge[v] = eid
                        queue.append(v)
            if parent_edge[t] == -1:
                return total
            bottleneck = np.inf
            v = t
            while v != s:
                eid = parent_edge[v]
                bottleneck = min(bottleneck, self.cap[eid])
                v = self.head[eid ^ 1]
            v = t
            while v != s:
                eid = parent_edge[v]
                self.cap[eid] -= bottleneck
                self.cap[eid ^ 1] += bottleneck
                v = self.head[eid ^ 1]
            total += bottleneck


def max_flow(network: FlowNetwork, source: int, sink: int) -> tuple[float, list[float]]:
    """Max flow value plus per-edge flows, indexed by edge id."""
    value = network.max_flow(source, sink)
    flows = [network.flow_on(eid) for eid in range(0, len(network.head), 2)]
    return value, flows


def default_feasibility_tol(tg: TieGraph) -> float:
    # money units are arbitrary, so the tolerance tracks total budget
    return 1e-6 * float(np.sum(tg.capacities))


def recover_allocation(tg: TieGraph, feasibility_tol: float | None = None) -> np.ndarray:
    """Route money through the tie graph and return the allocation matrix.

    Every sold good collects exactly its price, every paced bidder pays out
    exactly their budget (their supply edge has a lower bound equal to its
    upper bound), and money moves only along tied winning bids. Allocation is
    money divided by price. Raises InfeasibleFlowError when the residual
    imbalance exceeds the tolerance.
    """
    if feasibility_tol is None:
        feasibility_tol = default_feasibility_tol(tg)
    n = tg.num_bidders
    x = np.zeros((n, tg.num_goods))
    if tg.sold_goods.size == 0:
        return x

    # node layout: 0 source, 1 sink, 2 super-source, 3 super-sink, bidders, goods
    S, T, SS, TT = 0, 1, 2, 3
    bid0 = 4
    good0 = 4 + n
    net = FlowNetwork(good0 + tg.sold_goods.size)
    excess = np.zeros(net.num_nodes)

    def add_bounded(u, v, lower, upper):
        eid = net.add_edge(u, v, upper - lower)
        excess[v] += lower
        excess[u] -= lower
        return eid

    for i in range(n):
        lower = tg.capacities[i] if tg.paced[i] else 0.0
        add_bounded(S, bid0 + i, lower, tg.capacities[i])
    money_edges = {}
    for k, j in enumerate(tg.sold_goods):
        price = tg.supplies[j]
        for i in tg.winners[k]:
            cap = min(tg.capacities[i], price)
            money_edges[(i, j)] = add_bounded(bid0 + i, good0 + k, 0.0, cap)
        add_bounded(good0 + k, T, price, price)

    net.add_edge(T, S, float(np.sum(tg.capacities)))
    required = 0.0
    for node in range(net.num_nodes):
        if excess[node] > 0:
            net.add_edge(SS, node, excess[node])
            required += excess[node]
        elif excess[node] < 0:
            net.add_edge(node, TT, -excess[node])

    routed = net.max_flow(SS, TT)
    deficit = required - routed
    if deficit > feasibility_tol:
        raise InfeasibleFlowError(deficit, feasibility_tol)

    for (i, j), eid in money_edges.items():
        money = net.flow_on(eid)
        if money > 0:
            x[i, j] = money / tg.supplies[j]
    return x
