"""Capacitated flow networks, routings, and deterministic routing evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

Edge = tuple[int, int]
FlowKey = tuple[int, int]

CONSERVATION_TOL = 1e-9


class NetworkError(ValueError):
    """Raised when a network or routing violates a structural invariant."""


@dataclass(frozen=True)
class Network:
    """Directed capacitated graph with dense 0-based vertex ids.

    Edges are stored in canonical order (sorted by (tail, head)); at most one
    edge per ordered pair, no self-loops, strictly positive capacities.
    """

    vertex_count: int
    edges: tuple[Edge, ...]
    capacity: Mapping[Edge, float]
    out_edges: Mapping[int, tuple[Edge, ...]] = field(compare=False, repr=False, default=None)
    in_edges: Mapping[int, tuple[Edge, ...]] = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        out: dict[int, list[Edge]] = {v: [] for v in range(self.vertex_count)}
        inc: dict[int, list[Edge]] = {v: [] for v in range(self.vertex_count)}
        for e in self.edges:
            out[e[0]].append(e)
            inc[e[1]].append(e)
        object.__setattr__(self, "out_edges", {v: tuple(es) for v, es in out.items()})
        object.__setattr__(self, "in_edges", {v: tuple(es) for v, es in inc.items()})

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def edge_index(self) -> dict[Edge, int]:
        return {e: i for i, e in enumerate(self.edges)}


@dataclass(frozen=True)
class Flow:
    """One commodity: (source, sink, demand)."""

    source: int
    sink: int
    demand: float

    def __post_init__(self):
        if self.source == self.sink:
            raise NetworkError(f"flow source equals sink: {self.source}")
        if self.demand < 0:
            raise NetworkError(f"negative demand for flow ({self.source},{self.sink})")


@dataclass(frozen=True)
class Routing:
    """Per-flow splitting ratios: flow (s,t) -> out-edge (v,u) -> fraction."""

    ratios: Mapping[FlowKey, Mapping[Edge, float]]


@dataclass(frozen=True)
class LinkLoadReport:
    utilisation: Mapping[Edge, float]
    u_max: float


def build_network(vertex_count: int, edge_list, capacities: Mapping[Edge, float]) -> Network:
    """Validate and canonicalise a directed capacitated graph."""
    if vertex_count < 1:
        raise NetworkError("vertex_count must be positive")
    seen = set()
    for (u, v) in edge_list:
        if u == v:
            raise NetworkError(f"self-loop edge ({u},{v})")
        if not (0 <= u < vertex_count and 0 <= v < vertex_count):
            raise NetworkError(f"edge ({u},{v}) endpoint out of range")
        if (u, v) in seen:
            raise NetworkError(f"duplicate edge ({u},{v})")
        seen.add((u, v))
    edges = tuple(sorted(seen))
    caps = {}
    for e in edges:
        c = capacities.get(e)
        if c is None:
            raise NetworkError(f"missing capacity for edge {e}")
        if not (c > 0):
            raise NetworkError(f"nonpositive capacity on edge {e}")
        caps[e] = float(c)
    return Network(vertex_count=vertex_count, edges=edges, capacity=caps)


def flows_from_demands(demands: np.ndarray) -> list[Flow]:
    """Positive-demand (s,t) pairs of a demand matrix, in row-major order."""
    flows = []
    n = demands.shape[0]
    for s in range(n):
        for t in range(n):
            if s != t and demands[s, t] > 0:
                flows.append(Flow(s, t, float(demands[s, t])))
    return flows


def _topological_order(vertices: set[int], edges) -> list[int]:
    """Kahn's algorithm; raises on a cycle."""
    indeg = {v: 0 for v in vertices}
    succ: dict[int, list[int]] = {v: [] for v in vertices}
    for (u, v) in edges:
        indeg[v] += 1
        succ[u].append(v)
    ready = sorted(v for v, d in indeg.items() if d == 0)
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for w in sorted(succ[v]):
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
        ready.sort()
    if len(order) != len(vertices):
        raise NetworkError("routing contains a loop")
    return order


def flow_edge_fractions(net: Network, flow_key: FlowKey, edge_ratios: Mapping[Edge, float]) -> dict[Edge, float]:
    """Per-edge fraction of one flow, by forward propagation in topological order.

    Requires the flow's edge set to be acyclic; checks conservation and that
    the sink absorbs the whole unit of flow.
    """
    s, t = flow_key
    vertices = {s, t}
    for (u, v) in edge_ratios:
        vertices.add(u)
        vertices.add(v)
    order = _topological_order(vertices, edge_ratios.keys())

    out_by_vertex: dict[int, list[Edge]] = {}
    for e in edge_ratios:
        out_by_vertex.setdefault(e[0], []).append(e)
    for (v, u) in out_by_vertex.get(t, []):
        if edge_ratios[(t, u)] != 0:
            raise NetworkError(f"nonzero ratio on sink out-edge ({t},{u})")

    frac = {v: 0.0 for v in vertices}
    frac[s] = 1.0
    edge_frac: dict[Edge, float] = {}
    for v in order:
        if v == t or frac[v] == 0.0:
            continue
        out = out_by_vertex.get(v)
        if not out:
            raise NetworkError(f"flow cannot reach sink: stranded at vertex {v}")
        total = sum(edge_ratios[e] for e in out)
        if abs(total - 1.0) > CONSERVATION_TOL:
            raise NetworkError(
                f"splitting ratios at vertex {v} sum to {total}, expected 1")
        for e in out:
            f = frac[v] * edge_ratios[e]
            edge_frac[e] = f
            frac[e[1]] += f
    if abs(frac[t] - 1.0) > CONSERVATION_TOL:
        raise NetworkError("flow cannot reach sink")
    return edge_frac


def simulate_routing(net: Network, demands: np.ndarray, routing: Routing) -> LinkLoadReport:
    """Evaluate a routing against a demand matrix: per-edge utilisation and its max."""
    demands = np.asarray(demands, dtype=float)
    if demands.shape != (net.vertex_count, net.vertex_count):
        raise NetworkError("demand matrix shape does not match network")
    if np.any(demands < 0) or np.any(np.diag(demands) != 0):
        raise NetworkError("demands must be nonnegative with zero diagonal")

    load = {e: 0.0 for e in net.edges}
    for flow in flows_from_demands(demands):
        key = (flow.source, flow.sink)
        edge_ratios = routing.ratios.get(key)
        if not edge_ratios:
            raise NetworkError(f"flow cannot reach sink: no ratios for flow {key}")
        for e in edge_ratios:
            if e not in load:
                raise NetworkError(f"routing uses unknown edge {e}")
        for e, f in flow_edge_fractions(net, key, edge_ratios).items():
            load[e] += f * flow.demand

    utilisation = {e: load[e] / net.capacity[e] for e in net.edges}
    u_max = max(utilisation.values()) if utilisation else 0.0
    return LinkLoadReport(utilisation=utilisation, u_max=u_max)


def validate_routing(net: Network, demands: np.ndarray, routing: Routing, tol: float = CONSERVATION_TOL) -> None:
    """Check routing constraints for every positive-demand flow; raises on violation."""
    for flow in flows_from_demands(np.asarray(demands, dtype=float)):
        key = (flow.source, flow.sink)
        edge_ratios = routing.ratios.get(key)
        if not edge_ratios:
            raise NetworkError(f"no ratios for positive-demand flow {key}")
        for e, r in edge_ratios.items():
            if not (-tol <= r <= 1 + tol):
                raise NetworkError(f"ratio out of [0,1] on edge {e} for flow {key}")
        # raises on loops, bad row sums, stranded flow
        flow_edge_fractions(net, key, edge_ratios)
