"""Routing/caching strategies and exact flow computation.

A strategy is the pair (phi, y): phi[k, e] is the fraction of item-k requests
arriving at src(e) that are forwarded over link e, y[k, i] the continuous
caching fraction at node i.  Flow conservation requires y + sum(phi) = 1 per
item at every non-server node, and both identically 0 at designated servers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergentCirculationError, StructuralError

T_ZERO = 1e-12  # arrival rates below this count as "no traffic"


class Strategy:
    """Per-item routing fractions phi (num_items x num_links) and caching
    fractions y (num_items x num_nodes)."""

    def __init__(self, topology, num_items, phi=None, y=None):
        E, V = topology.num_links, topology.num_nodes
        self.topology = topology
        self.num_items = num_items
        self.phi = np.zeros((num_items, E)) if phi is None else np.asarray(phi, float)
        self.y = np.zeros((num_items, V)) if y is None else np.asarray(y, float)
        if self.phi.shape != (num_items, E) or self.y.shape != (num_items, V):
            raise StructuralError("strategy arrays do not match topology/catalog")

    def copy(self):
        return Strategy(self.topology, self.num_items, self.phi.copy(), self.y.copy())

    def set_phi(self, i, j, k, value):
        self.phi[k, self.topology.edge_index[(i, j)]] = value

    def get_phi(self, i, j, k):
        e = self.topology.edge_index.get((i, j))
        return 0.0 if e is None else self.phi[k, e]

    def rho(self, i, j, k):
        """Conditional routing variable phi/(1-y); undefined at y=1."""
        yv = self.y[k, i]
        if yv >= 1.0:
            raise ZeroDivisionError(f"rho undefined at y[{k},{i}]=1")
        return self.get_phi(i, j, k) / (1.0 - yv)

    @classmethod
    def from_dicts(cls, topology, num_items, phi=None, y=None):
        """Build from {(i,j,k): value} and {(i,k): value} mappings (tests)."""
        s = cls(topology, num_items)
        for (i, j, k), v in (phi or {}).items():
            s.set_phi(i, j, k, v)
        for (i, k), v in (y or {}).items():
            s.y[k, i] = v
        return s


@dataclass
class ValidationReport:
    """Outcome of validate_strategy: all violated constraints with magnitudes."""

    passed: bool
    worst: float
    violations: list = field(default_factory=list)  # (kind, location, magnitude)


def validate_strategy(topology, demand, strategy, tol=1e-9):
    """Check box and flow-conservation constraints of a strategy.

    Reports every violated simplex/conservation constraint with its max
    absolute violation; passes iff everything is within ``tol``.
    """
    if strategy.num_items != demand.num_items:
        raise StructuralError("strategy and demand disagree on catalog size")
    if strategy.topology.num_nodes != topology.num_nodes:
        raise StructuralError("strategy built for a different topology")
    phi, y = strategy.phi, strategy.y
    violations = []

    for arr, name in ((phi, "phi"), (y, "y")):
        low = np.minimum(arr, 0.0)
        high = np.maximum(arr - 1.0, 0.0)
        for k, idx in zip(*np.nonzero((low < -tol) | (high > tol))):
            mag = max(-low[k, idx], high[k, idx])
            violations.append(("box", (name, int(idx), int(k)), float(mag)))

    # conservation: sum of phi out of node i plus y, per item
    out_sum = np.zeros_like(y)
    np.add.at(out_sum.T, topology.src, phi.T)
    total = out_sum + y
    for k in range(demand.num_items):
        for i in range(topology.num_nodes):
            if i in demand.servers[k]:
                # servers are forced to y = 0 and no forwarding
                if y[k, i] > tol:
                    violations.append(("server_cache", (i, k), float(y[k, i])))
                if out_sum[k, i] > tol:
                    violations.append(("server_forward", (i, k), float(out_sum[k, i])))
            else:
                err = abs(total[k, i] - 1.0)
                if err > tol:
                    violations.append(("conservation", (i, k), float(err)))

    worst = max((m for _, _, m in violations), default=0.0)
    return ValidationReport(passed=worst <= tol, worst=worst, violations=violations)


@dataclass
class FlowState:
    """Exact flows and costs induced by a strategy.

    t[k, i]  : total request arrival rate of item k at node i
    f[k, e]  : response flow of item k on link e  (f_ji(k) = t_i(k) phi_ij(k))
    F[e]     : total flow on link e
    Y[i]     : cache occupancy sum_k y[k, i]
    """

    t: np.ndarray
    f: np.ndarray
    F: np.ndarray
    Y: np.ndarray
    link_cost: float
    cache_cost: float
    total_cost: float


def solve_traffic(topology, demand, strategy, cost):
    """Solve t = r + Phi^T t per item and populate flows and costs.

    Uses a direct dense solve, so loopy strategies are supported as long as
    the system is nonsingular.  A cycle whose routing-fraction product reaches
    one makes the circulation divergent and raises DivergentCirculationError.
    """
    V, E = topology.num_nodes, topology.num_links
    C = demand.num_items
    phi = strategy.phi
    # M[k] = I - Phi^T ; Phi^T[dst, src] = phi[src -> dst]
    M = np.broadcast_to(np.eye(V), (C, V, V)).copy()
    M[:, topology.dst, topology.src] -= phi
    r = demand.rates
    try:
        t = np.linalg.solve(M, r[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        raise DivergentCirculationError(
            "traffic system is singular (routing cycle with unit fraction product)"
        ) from None
    residual = np.abs(np.einsum("kij,kj->ki", M, t) - r).max()
    scale = max(1.0, np.abs(r).max(), np.abs(t).max() if t.size else 1.0)
    if not np.isfinite(t).all() or residual > 1e-7 * scale:
        conds = [float(np.linalg.cond(M[k])) for k in range(C)]
        raise DivergentCirculationError(
            f"traffic system near-singular (worst condition number {max(conds):.3g})"
        )
    t = np.where(np.abs(t) < T_ZERO, 0.0, t)
    if (t < 0).any():
        raise DivergentCirculationError("traffic solve produced negative rates")

    # f on link e=(i,j) carries responses i->j generated by requests j->i
    f = t[:, topology.dst] * phi[:, topology.rev]
    F = f.sum(axis=0)
    Y = strategy.y.sum(axis=0)
    link_cost = float(cost.link_cost(F).sum())
    cache_cost = float(cost.cache_cost(Y).sum())
    return FlowState(
        t=t, f=f, F=F, Y=Y,
        link_cost=link_cost, cache_cost=cache_cost,
        total_cost=link_cost + cache_cost,
    )


def total_cost(flow_state, cost):
    """Sum of link routing costs and cache deployment costs, Eq.-style
    T = sum_ij D_ij(F_ij) + sum_i B_i(Y_i)."""
    return float(cost.link_cost(flow_state.F).sum() + cost.cache_cost(flow_state.Y).sum())
