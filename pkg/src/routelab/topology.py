"""Ingest GraphML topologies and produce perturbed variants."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np

from .graph import Network, NetworkError, build_network

LINK_SPEED_KEYS = ("LinkSpeedRaw", "LinkSpeed", "linkspeed", "bandwidth", "capacity")


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class TopologySpec:
    name: str
    source_path: str
    default_capacity: float = 1000.0
    undirected_expansion: bool = True

    def __post_init__(self):
        if not (self.default_capacity > 0):
            raise TopologyError("default_capacity must be positive")


def _edge_capacity(data: dict, default: float) -> float:
    for key in LINK_SPEED_KEYS:
        if key in data:
            try:
                value = float(data[key])
            except (TypeError, ValueError):
                continue
            if value > 0:
                return value
    return default


def is_connected(net: Network) -> bool:
    """Connectivity of the underlying undirected graph."""
    if net.vertex_count == 0:
        return False
    adj: dict[int, set[int]] = {v: set() for v in range(net.vertex_count)}
    for (u, v) in net.edges:
        adj[u].add(v)
        adj[v].add(u)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == net.vertex_count


def load_graphml(spec: TopologySpec, write_nodemap: bool = True) -> Network:
    """Load a GraphML topology into a Network.

    Undirected input edges become two directed edges; parallel edges are
    collapsed by summing capacities; capacities are normalised by the
    topology's maximum so they lie in (0,1]. The original-label -> dense-id
    map is written as a sidecar JSON next to the source file.
    """
    path = Path(spec.source_path)
    if not path.exists():
        raise TopologyError(f"topology file not found: {path}")
    try:
        g = nx.read_graphml(path)
    except Exception as exc:
        raise TopologyError(f"unparseable GraphML {path}: {exc}") from exc

    labels = sorted(g.nodes(), key=str)
    label_to_id = {label: i for i, label in enumerate(labels)}

    caps: dict[tuple[int, int], float] = {}
    for u, v, data in g.edges(data=True):
        a, b = label_to_id[u], label_to_id[v]
        if a == b:
            continue
        c = _edge_capacity(data, spec.default_capacity)
        directed_pairs = [(a, b)]
        if spec.undirected_expansion and not g.is_directed():
            directed_pairs.append((b, a))
        elif g.is_directed():
            pass
        for pair in directed_pairs:
            caps[pair] = caps.get(pair, 0.0) + c

    if not caps:
        raise TopologyError(f"topology {spec.name} has no usable edges")
    c_max = max(caps.values())
    caps = {e: c / c_max for e, c in caps.items()}

    net = build_network(len(labels), list(caps), caps)
    if not is_connected(net):
        raise TopologyError("topology not connected")

    if write_nodemap:
        sidecar = path.with_name(f"{spec.name}.nodemap.json")
        sidecar.write_text(json.dumps({str(k): v for k, v in label_to_id.items()},
                                      indent=2, sort_keys=True))
    return net


PERTURB_OPS = ("add_node", "remove_node", "add_edge", "remove_edge")


def perturb_topology(net: Network, ops: dict[str, int], rng_seed: int,
                     default_capacity: float = 1.0, max_retries: int = 200) -> Network:
    """Apply counted add/remove node/edge operations, keeping the graph connected.

    `ops` maps op names (add_node, remove_node, add_edge, remove_edge) to
    counts. New nodes attach to 2 distinct existing vertices bidirectionally
    at default capacity. Resamples until the result is connected, within a
    bounded retry budget; deterministic for a fixed seed.
    """
    if not is_connected(net):
        raise TopologyError("input topology not connected")
    unknown = set(ops) - set(PERTURB_OPS)
    if unknown:
        raise TopologyError(f"unknown perturbation ops: {sorted(unknown)}")
    if net.vertex_count - ops.get("remove_node", 0) + ops.get("add_node", 0) < 3:
        raise TopologyError("requested removals leave fewer than 3 vertices")
    if sum(ops.values()) == 0:
        return net

    for attempt in range(max_retries):
        rng = np.random.default_rng([rng_seed, attempt])
        try:
            candidate = _perturb_once(net, ops, rng, default_capacity)
        except TopologyError:
            continue
        if is_connected(candidate):
            return candidate
    raise TopologyError("could not produce connected perturbation")


def random_perturbation(net: Network, num_ops: int, rng_seed: int,
                        default_capacity: float = 1.0) -> Network:
    """Perturbation with `num_ops` op types chosen uniformly at random."""
    rng = np.random.default_rng([rng_seed, 10_000_019])
    ops = {name: 0 for name in PERTURB_OPS}
    for _ in range(num_ops):
        ops[PERTURB_OPS[int(rng.integers(len(PERTURB_OPS)))]] += 1
    if net.vertex_count - ops["remove_node"] + ops["add_node"] < 3:
        ops["remove_node"], ops["add_node"] = 0, ops["remove_node"]
    return perturb_topology(net, ops, rng_seed, default_capacity)


def _perturb_once(net: Network, ops: dict[str, int], rng: np.random.Generator,
                  default_capacity: float) -> Network:
    # work on the undirected edge set; expand back to directed at the end
    caps: dict[tuple[int, int], float] = {}
    for (u, v) in net.edges:
        key = (min(u, v), max(u, v))
        caps.setdefault(key, net.capacity[(u, v)])
    n = net.vertex_count

    schedule = []
    for name in PERTURB_OPS:
        schedule.extend([name] * ops.get(name, 0))
    rng.shuffle(schedule)

    for op in schedule:
        if op == "remove_node":
            if n <= 3:
                raise TopologyError("cannot remove node: too few vertices")
            victim = int(rng.integers(n))
            caps = {(u, v): c for (u, v), c in caps.items() if victim not in (u, v)}
            caps = {tuple(sorted((x - (x > victim), y - (y > victim)))): c
                    for (x, y), c in caps.items()}
            n -= 1
        elif op == "add_node":
            targets = rng.choice(n, size=min(2, n), replace=False)
            for t in targets:
                caps[(int(t), n)] = default_capacity
            n += 1
        elif op == "remove_edge":
            if len(caps) <= n - 1:
                raise TopologyError("cannot remove edge: would disconnect")
            keys = sorted(caps)
            del caps[keys[int(rng.integers(len(keys)))]]
        else:  # add_edge
            free = [(u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in caps]
            if free:
                caps[free[int(rng.integers(len(free)))]] = default_capacity

    directed = {}
    for (u, v), c in caps.items():
        directed[(u, v)] = c
        directed[(v, u)] = c
    return build_network(n, list(directed), directed)
