"""Shared fixture builders and independent oracles used across the tests."""

import numpy as np

from cachenet.flow import Strategy, solve_traffic
from cachenet.network import (
    CostModel,
    Demand,
    Topology,
    linear_cache_costs,
    linear_link_costs,
    poly3_link_costs,
    zero_costs,
)


def line_topology(n):
    """Path 0 - 1 - ... - n-1 with symmetric links."""
    links = []
    for i in range(n - 1):
        links += [(i, i + 1), (i + 1, i)]
    return Topology(n, links)


def symmetric_costs(topology, d_by_pair, b_by_node, kind="linear"):
    """Link costs from {frozenset pair: d}; cache costs from per-node b."""
    d = np.array([d_by_pair[frozenset(e)] for e in topology.links])
    link = linear_link_costs(d) if kind == "linear" else poly3_link_costs(d)
    b = np.asarray(b_by_node, dtype=float)
    cache = zero_costs(topology.num_nodes) if (b == 0).all() else linear_cache_costs(b)
    return CostModel(link=link, cache=cache)


def appendix_loop_fixture():
    """Three-node fixture (requester i=0, cache-capable j=1, server s=2).

    Linear marginals d_ij = d_ji = 1 and d_js = d_sj = 5 reconstructed from
    the worked totals 3.0 (loop allowed) and 3.5 (loop-free):
        loop:       F_ij = 1, F_ji = 2  ->  d*(1 + 2) = 3      => d = 1
        loop-free:  F_ji = 1, F_sj = .5 ->  1 + 0.5*d_sj = 3.5 => d_sj = 5
    Node j's caching is free but capped at y_j <= 0.5.
    """
    top = line_topology(3)
    dem = Demand(1, [{2}], np.array([[1.0, 0.0, 0.0]]))
    cost = symmetric_costs(
        top,
        {frozenset((0, 1)): 1.0, frozenset((1, 2)): 5.0},
        [0.0, 0.0, 0.0],
    )
    loop = Strategy.from_dicts(
        top, 1, phi={(0, 1, 0): 1.0, (1, 0, 0): 0.5}, y={(1, 0): 0.5}
    )
    loop_free = Strategy.from_dicts(
        top, 1, phi={(0, 1, 0): 1.0, (1, 2, 0): 0.5}, y={(1, 0): 0.5}
    )
    caps = {(0, 0): 0.0, (1, 0): 0.5}
    return top, dem, cost, loop, loop_free, caps


def random_loopfree_instance(rng, max_nodes=6, max_items=3, interior=True,
                             poly=True):
    """Random small instance with loop-free interior-of-simplex strategy.

    Routing fractions follow a random DAG ordered by node id (i may forward
    only to larger ids or cache), so phi is loop-free by construction; the
    highest node is the designated server for every item.
    """
    n = int(rng.integers(3, max_nodes + 1))
    C = int(rng.integers(1, max_items + 1))
    links = []
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or rng.random() < 0.5:
                links += [(i, j), (j, i)]
    top = Topology(n, links)
    servers = [{n - 1} for _ in range(C)]
    rates = rng.uniform(0.2, 2.0, size=(C, n))
    rates[:, n - 1] = 0.0
    dem = Demand(C, servers, rates)
    d = rng.uniform(0.2, 1.0, size=top.num_links)
    d = (d + d[top.rev]) / 2.0
    link = poly3_link_costs(d) if poly else linear_link_costs(d)
    cost = CostModel(link=link, cache=linear_cache_costs(rng.uniform(0.5, 2.0, n)))

    strat = Strategy(top, C)
    for k in range(C):
        for i in range(n - 1):
            downhill = [e for e in top.out_edges[i] if top.dst[e] > i]
            w = rng.uniform(0.2, 1.0, size=len(downhill) + 1)
            w = w / w.sum()
            if interior:
                y_frac = 0.15 + 0.5 * w[-1]
                strat.y[k, i] = y_frac
                w = w[:-1] / w[:-1].sum() * (1.0 - y_frac)
            else:
                strat.y[k, i] = w[-1]
                w = w[:-1]
            for e, we in zip(downhill, w):
                strat.phi[k, e] = we
    return top, dem, cost, strat


def perturb_pair_cost(topology, demand, strategy, cost, k, e_plus, e_minus, h):
    """T under a conservation-preserving shift of phi mass (oracle helper)."""
    s = strategy.copy()
    s.phi[k, e_plus] += h
    s.phi[k, e_minus] -= h
    return solve_traffic(topology, demand, s, cost).total_cost


def fd_phi_pair(topology, demand, strategy, cost, k, e_plus, e_minus, h=1e-6):
    """Central finite difference of T for a shift between two directions."""
    up = perturb_pair_cost(topology, demand, strategy, cost, k, e_plus, e_minus, h)
    dn = perturb_pair_cost(topology, demand, strategy, cost, k, e_plus, e_minus, -h)
    return (up - dn) / (2 * h)
