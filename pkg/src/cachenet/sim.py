"""Discrete-event packet-level simulator.

Requests are generated per (node, item) as Poisson processes, forwarded hop
by hop with token-based randomized forwarding, and terminate at a cache hit
or a designated server; responses retrace the request path in reverse, and
per-link response counts over monitor windows give the measured flows and
costs.  Strategies are re-rounded into cache decisions at every slot start
and updated by the active policy at every update slot (the last slot of a
period).

Hop traversal takes a small fixed latency purely to order events; all costs
are computed from counted flows, never from simulated latency.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

N_TOKEN = 50

GEN, REQ, RESP = 0, 1, 2


@dataclass
class SimSchedule:
    t_slot: float = 10.0
    slots_per_period: int = 20
    periods: int = 100
    t_monitor: float = None   # defaults to t_slot
    hop_latency: float = 0.01

    def __post_init__(self):
        if self.slots_per_period < 1:
            raise ConfigurationError("need at least one slot per period")
        if self.t_monitor is None:
            self.t_monitor = self.t_slot
        if self.t_monitor <= 0 or self.t_slot <= 0:
            raise ConfigurationError("slot and monitor intervals must be positive")


def apportion_tokens(weights, n_tokens=N_TOKEN):
    """Largest-remainder apportionment of n_tokens across next hops.

    weights: list of (neighbor, weight) with nonnegative weights summing to
    anything positive.  Ties in remainders break toward the lowest id.
    Returns a dict neighbor -> token count summing exactly to n_tokens.
    """
    total = sum(w for _, w in weights)
    if total <= 0:
        return {}
    shares = [(j, n_tokens * w / total) for j, w in weights]
    counts = {j: int(math.floor(s)) for j, s in shares}
    left = n_tokens - sum(counts.values())
    remainders = sorted(
        ((s - math.floor(s), j) for j, s in shares),
        key=lambda t: (-t[0], t[1]),
    )
    for _, j in remainders[:left]:
        counts[j] += 1
    return {j: c for j, c in counts.items() if c > 0}


class TokenPool:
    """Multiset of next-hop tokens, consumed per forwarded request."""

    __slots__ = ("tokens",)

    def __init__(self):
        self.tokens = []

    def draw(self, rng):
        toks = self.tokens
        if not toks:
            return None
        idx = int(rng.integers(len(toks))) if len(toks) > 1 else 0
        toks[idx], toks[-1] = toks[-1], toks[idx]
        return toks.pop()

    def refill(self, counts):
        toks = []
        for j in sorted(counts):
            toks.extend([j] * counts[j])
        self.tokens = toks


@dataclass
class WindowRecord:
    period: int
    slot: int
    time: float
    measured_link_cost: float
    measured_cache_cost: float
    measured_total: float
    theoretical_total: float
    total_cache_size: float
    unroutable: int
    messages: int
    measured_F: np.ndarray = None


@dataclass
class SimulationRun:
    records: list
    policy: object
    requests_issued: int
    responses_delivered: int
    in_flight: int
    unroutable_total: int
    miss_cost: np.ndarray        # per node, cumulative
    miss_cost_item: np.ndarray   # per (item, node), cumulative

    def steady_state_mean(self, skip_fraction=0.5, fieldname="measured_total"):
        vals = [getattr(r, fieldname) for r in self.records]
        start = int(len(vals) * skip_fraction)
        return float(np.mean(vals[start:]))


class Simulator:
    """Event-driven run of one scenario under one policy."""

    def __init__(self, scenario, policy, schedule, seed, trace=None,
                 keep_flow_samples=False):
        self.scenario = scenario
        self.policy = policy
        self.schedule = schedule
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.trace = trace
        self.keep_flow_samples = keep_flow_samples

        top = scenario.topology
        self.d_weights = scenario.cost.link_deriv(np.zeros(top.num_links))
        self.pools = {}
        self.window_counts = np.zeros(top.num_links)
        self.period_counts = np.zeros(top.num_links)
        self.period_arrivals = np.zeros((scenario.demand.num_items, top.num_nodes))
        self.measure_active = True
        self.window_unroutable = 0
        self.miss_cost = np.zeros(top.num_nodes)
        self.miss_cost_item = np.zeros((scenario.demand.num_items, top.num_nodes))
        self.requests_issued = 0
        self.responses_delivered = 0
        self.unroutable_total = 0
        self.records = []
        self._pending_messages = 0

    # -- forwarding ------------------------------------------------------

    def token_forward(self, node, item):
        """Draw a next hop for (node, item), refilling the pool on demand."""
        pool = self.pools.get((node, item))
        if pool is None:
            pool = TokenPool()
            self.pools[(node, item)] = pool
        hop = pool.draw(self.rng)
        if hop is not None:
            return hop
        weights = self.policy.routing_weights(node, item)
        counts = apportion_tokens(weights)
        if not counts:
            return None
        pool.refill(counts)
        return pool.draw(self.rng)

    def _failsafe_hop(self, node, item):
        options = self.policy.failsafe_neighbors(node, item)
        return options[0] if options else None

    # -- event handlers ----------------------------------------------------

    def run(self):
        sched = self.schedule
        scen = self.scenario
        top, dem = scen.topology, scen.demand
        heap = []
        seq = 0
        for k in range(dem.num_items):
            for i in range(top.num_nodes):
                r = dem.rates[k, i]
                if r > 0:
                    t0 = self.rng.exponential(1.0 / r)
                    heapq.heappush(heap, (t0, seq, GEN, i, k, None))
                    seq += 1

        horizon = sched.periods * sched.slots_per_period * sched.t_slot
        n_windows = int(round(horizon / sched.t_monitor))
        window_end = sched.t_monitor
        window_idx = 0
        slot_len = sched.t_slot
        slot_end = slot_len
        slot_idx = 0
        self.policy.setup(scen, self)
        self.policy.on_slot(0, 0)

        while heap:
            time, _, kind, a, b, c = heap[0]
            if time >= horizon:
                break
            while time >= min(window_end, slot_end):
                if window_end <= slot_end:
                    self._flush_window(window_idx, window_end)
                    window_idx += 1
                    window_end = (window_idx + 1) * sched.t_monitor
                    if window_idx >= n_windows:
                        break
                else:
                    slot_idx += 1
                    self._slot_boundary(slot_idx)
                    slot_end = (slot_idx + 1) * slot_len
            if window_idx >= n_windows:
                break
            heapq.heappop(heap)

            if kind == GEN:
                i, k = a, b
                self.requests_issued += 1
                nxt = time + self.rng.exponential(1.0 / dem.rates[k, i])
                heapq.heappush(heap, (nxt, seq, GEN, i, k, None))
                seq += 1
                self._handle_request(heap, seq, time, k, [i])
                seq += 1
            elif kind == REQ:
                self._handle_request(heap, seq, time, a, b)
                seq += 1
            else:  # RESP
                k, path = a, b
                pos, cum = c
                self._count_response_hop(k, path, pos, cum, heap, seq, time)
                seq += 1

        in_flight = sum(1 for ev in heap if ev[2] != GEN)
        while window_idx < n_windows:
            self._flush_window(window_idx, (window_idx + 1) * sched.t_monitor)
            window_idx += 1
        return SimulationRun(
            records=self.records,
            policy=self.policy,
            requests_issued=self.requests_issued,
            responses_delivered=self.responses_delivered,
            in_flight=in_flight,
            unroutable_total=self.unroutable_total,
            miss_cost=self.miss_cost,
            miss_cost_item=self.miss_cost_item,
        )

    def _handle_request(self, heap, seq, time, k, path):
        scen = self.scenario
        top, dem = scen.topology, scen.demand
        node = path[-1]
        if self.measure_active:
            self.period_arrivals[k, node] += 1
        if self.policy.is_hit(node, k) or node in dem.servers[k]:
            self.policy.on_hit(node, k)
            if self.trace is not None:
                kind = "server" if node in dem.servers[k] else "hit"
                self.trace.write(f"{time:.6f} {kind} node={node} item={k}\n")
            self._start_response(heap, seq, time, k, path)
            return
        self.policy.on_miss(node, k)
        hop = self.token_forward(node, k)
        if hop is None:
            self.window_unroutable += 1
            self.unroutable_total += 1
            hop = self._failsafe_hop(node, k)
            if hop is None:
                return  # reported; packet dropped only if truly no neighbor
        if self.trace is not None:
            self.trace.write(f"{time:.6f} fwd node={node} item={k} to={hop}\n")
        path.append(hop)
        heapq.heappush(
            heap, (time + self.schedule.hop_latency, seq, REQ, k, path, None)
        )

    def _start_response(self, heap, seq, time, k, path):
        if len(path) == 1:
            self.responses_delivered += 1  # served where it was born
            return
        pos = len(path) - 1
        heapq.heappush(
            heap,
            (time + self.schedule.hop_latency, seq, RESP, k, path, (pos - 1, 0.0)),
        )

    def _count_response_hop(self, k, path, pos, cum, heap, seq, time):
        top = self.scenario.topology
        e = top.edge_index[(path[pos + 1], path[pos])]
        self.window_counts[e] += 1  # user-facing windows count every slot
        if self.measure_active:
            self.period_counts[e] += 1  # the policy's period average skips
                                        # the update slot
        cum += self.d_weights[e]
        node = path[pos]
        self.miss_cost[node] += cum
        self.miss_cost_item[k, node] += cum
        self.policy.on_response_pass(node, k)
        if pos == 0:
            self.responses_delivered += 1
            return
        heapq.heappush(
            heap,
            (time + self.schedule.hop_latency, seq, RESP, k, path, (pos - 1, cum)),
        )

    # -- boundaries --------------------------------------------------------

    def _slot_boundary(self, slot_idx):
        L = self.schedule.slots_per_period
        period, slot = divmod(slot_idx, L)
        if period >= self.schedule.periods:
            return
        if slot == 0 and period > 0:
            # period boundary: apply the policy update with the measured
            # averages of the previous period's first (L-1) slots (the whole
            # single slot when L = 1)
            meas_slots = max(1, L - 1)
            elapsed = meas_slots * self.schedule.t_slot
            msgs = self.policy.on_update(
                period - 1,
                self.period_counts / elapsed,
                self.period_arrivals / elapsed,
            )
            self._pending_messages += int(msgs or 0)
            self.period_counts[:] = 0.0
            self.period_arrivals[:] = 0.0
            self.measure_active = True
        if slot == L - 1 and L > 1:
            # entering the update slot: freeze this period's measurement
            self.measure_active = False
        self.policy.on_slot(period, slot)

    def _flush_window(self, window_idx, window_end):
        sched = self.schedule
        scen = self.scenario
        slot_idx = int((window_end - 1e-9) // sched.t_slot)
        period, slot = divmod(slot_idx, sched.slots_per_period)
        F_hat = self.window_counts / sched.t_monitor
        link_cost = float(scen.cost.link_cost(F_hat).sum())
        X = self.policy.cache_occupancy()
        cache_cost = float(scen.cost.cache_cost(X).sum())
        theo = self.policy.theoretical_total(scen)
        self.records.append(WindowRecord(
            period=period,
            slot=slot,
            time=window_end,
            measured_link_cost=link_cost,
            measured_cache_cost=cache_cost,
            measured_total=link_cost + cache_cost,
            theoretical_total=theo,
            total_cache_size=float(X.sum()),
            unroutable=self.window_unroutable,
            messages=self._pending_messages,
            measured_F=F_hat.copy() if self.keep_flow_samples else None,
        ))
        self.window_counts[:] = 0.0
        self.window_unroutable = 0
        self._pending_messages = 0


def run_simulation(scenario, policy, schedule, seed, trace=None,
                   keep_flow_samples=False):
    """Run one packet-level simulation; returns a SimulationRun."""
    sim = Simulator(scenario, policy, schedule, seed, trace, keep_flow_samples)
    return sim.run()


def decision_flow_state(scenario, strategy, x):
    """Flows when caches hold the binary decisions x but conditional routing
    is preserved: phi_eff = rho * (1 - x)."""
    from .flow import Strategy, solve_traffic

    C, V = x.shape
    top = scenario.topology
    y = strategy.y
    denom = 1.0 - y[:, top.src]
    phi_eff = np.where(
        denom > 1e-12,
        strategy.phi * (1.0 - x[:, top.src]) / np.maximum(denom, 1e-12),
        0.0,
    )
    eff = Strategy(top, C, phi=phi_eff, y=x.astype(float))
    return solve_traffic(top, scenario.demand, eff, scenario.cost)


def mc_measured_cost_model(scenario, strategy, t_monitor, n_samples, seed):
    """Monte-Carlo model of the per-window measured total cost.

    Resamples the two randomizations a window sees: per-node DRR cache
    decisions and Poisson counting of per-link responses over the window.
    Token forwarding is treated as Poisson splitting (slightly conservative:
    token pools have sub-Poisson variance).  Returns (mean, std) of the
    window cost.
    """
    from .rounding import build_bar_map, sample_decision

    rng = np.random.default_rng(seed)
    top, dem, cost = scenario.topology, scenario.demand, scenario.cost
    C, V = dem.num_items, top.num_nodes
    maps = [build_bar_map(strategy.y[:, i]) for i in range(V)]
    samples = np.empty(n_samples)
    for s in range(n_samples):
        x = np.zeros((C, V), dtype=np.int8)
        for i in range(V):
            x[:, i] = sample_decision(maps[i], float(rng.random()))
        fs = decision_flow_state(scenario, strategy, x)
        counts = rng.poisson(np.maximum(fs.F, 0.0) * t_monitor)
        F_hat = counts / t_monitor
        link = float(cost.link_cost(F_hat).sum())
        cache = float(cost.cache_cost(x.sum(axis=0).astype(float)).sum())
        samples[s] = link + cache
    return float(samples.mean()), float(samples.std(ddof=1))
