"""Dense network machinery: parameter store, MLPs, graph-network blocks.

All parameters live in one flat float64 array (ParamStore) described by an
ordered (name, shape) manifest; a forward pass binds the store into leaf
Tensors so gradients can be gathered back into a flat array after backward.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


Manifest = list[tuple[str, tuple[int, ...]]]


class ParamStore:
    """Flat learnable parameter array with a named-slice manifest."""

    def __init__(self, manifest: Manifest, values: np.ndarray | None = None):
        names = [n for n, _ in manifest]
        if len(set(names)) != len(names):
            raise ShapeError("duplicate parameter names in manifest")
        self.manifest = [(n, tuple(s)) for n, s in manifest]
        self._offsets = {}
        off = 0
        for name, shape in self.manifest:
            size = int(np.prod(shape)) if shape else 1
            self._offsets[name] = (off, off + size, shape)
            off += size
        self.size = off
        if values is None:
            self.values = np.zeros(off)
        else:
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (off,):
                raise ShapeError(f"values length {values.shape} != manifest size {off}")
            self.values = values.copy()

    @classmethod
    def init_random(cls, manifest: Manifest, rng: np.random.Generator) -> "ParamStore":
        """Glorot-scaled weights, zero biases, small init for everything else."""
        store = cls(manifest)
        for name, shape in store.manifest:
            lo, hi, _ = store._offsets[name]
            if len(shape) == 2:
                scale = np.sqrt(2.0 / (shape[0] + shape[1]))
                store.values[lo:hi] = rng.normal(0.0, scale, size=hi - lo)
            elif name.endswith(".b") or name.endswith("b0") or len(shape) <= 1:
                store.values[lo:hi] = 0.0
        return store

    def slice(self, name: str) -> np.ndarray:
        lo, hi, shape = self._offsets[name]
        return self.values[lo:hi].reshape(shape)

    def bind(self) -> "BoundParams":
        return BoundParams(self)

    def copy(self) -> "ParamStore":
        return ParamStore(self.manifest, self.values)


class BoundParams:
    """Leaf tensors over a ParamStore for one forward/backward pass."""

    def __init__(self, store: ParamStore):
        self.store = store
        self._leaves: dict[str, Tensor] = {}

    def has(self, name: str) -> bool:
        return name in self.store._offsets

    def t(self, name: str) -> Tensor:
        if name not in self._leaves:
            self._leaves[name] = Tensor(self.store.slice(name))
        return self._leaves[name]

    def flat_grad(self) -> np.ndarray:
        grad = np.zeros(self.store.size)
        for name, leaf in self._leaves.items():
            if leaf.grad is not None:
                lo, hi, _ = self.store._offsets[name]
                grad[lo:hi] = leaf.grad.reshape(-1)
        return grad


# -- MLP ----------------------------------------------------------------------

def mlp_manifest(prefix: str, widths: list[int]) -> Manifest:
    out: Manifest = []
    for i in range(len(widths) - 1):
        out.append((f"{prefix}.W{i}", (widths[i], widths[i + 1])))
        out.append((f"{prefix}.b{i}", (widths[i + 1],)))
    return out


def mlp_forward(bound: BoundParams, prefix: str, x: Tensor) -> Tensor:
    """Affine layers, tanh on hidden layers, linear output."""
    squeeze = False
    if x.value.ndim == 1:
        x = x.reshape(1, -1)
        squeeze = True
    i = 0
    while bound.has(f"{prefix}.W{i}"):
        w = bound.t(f"{prefix}.W{i}")
        if x.value.shape[1] != w.value.shape[0]:
            raise ShapeError(
                f"{prefix}.W{i}: input width {x.value.shape[1]} != {w.value.shape[0]}")
        x = x @ w + bound.t(f"{prefix}.b{i}")
        i += 1
        if bound.has(f"{prefix}.W{i}"):
            x = ad.tanh(x)
    if i == 0:
        raise ShapeError(f"no layers found for MLP prefix {prefix!r}")
    return x.reshape(-1) if squeeze else x


# -- graph tuples --------------------------------------------------------------

@dataclass(frozen=True)
class GNGraph:
    """Attribute triple (globals, vertices, edges) plus connectivity.

    Holds one or more graphs: `node_graph`/`edge_graph` assign every vertex
    and edge to a graph id, and `globals_` has one row per graph. Attribute
    fields may be numpy arrays or Tensors (during a differentiable forward).
    """

    globals_: object   # (G, d_u)
    vertices: object   # (N_v, d_v)
    edges: object      # (N_e, d_e)
    senders: np.ndarray
    receivers: np.ndarray
    node_graph: np.ndarray
    edge_graph: np.ndarray

    def __post_init__(self):
        n_v = _rows(self.vertices)
        if len(self.senders) != len(self.receivers) or len(self.senders) != _rows(self.edges):
            raise ShapeError("edge arrays have inconsistent lengths")
        if len(self.senders) and (self.senders.max() >= n_v or self.receivers.max() >= n_v):
            raise ShapeError("edge endpoint index out of range")

    @property
    def num_graphs(self) -> int:
        return _rows(self.globals_)


def _rows(x) -> int:
    return (x.value if isinstance(x, Tensor) else x).shape[0]


def single_graph(globals_, vertices, edges, senders, receivers) -> GNGraph:
    senders = np.asarray(senders, dtype=np.intp)
    receivers = np.asarray(receivers, dtype=np.intp)
    return GNGraph(
        globals_=np.atleast_2d(np.asarray(globals_, dtype=float)),
        vertices=np.asarray(vertices, dtype=float),
        edges=np.asarray(edges, dtype=float),
        senders=senders,
        receivers=receivers,
        node_graph=np.zeros(len(np.asarray(vertices)), dtype=np.intp),
        edge_graph=np.zeros(len(senders), dtype=np.intp),
    )


def batch_graphs(graphs: list[GNGraph]) -> GNGraph:
    """Disjoint union of graphs, offsetting vertex indices and graph ids."""
    globals_, vertices, edges = [], [], []
    senders, receivers, node_graph, edge_graph = [], [], [], []
    v_off = g_off = 0
    for g in graphs:
        globals_.append(np.atleast_2d(g.globals_))
        vertices.append(g.vertices)
        edges.append(g.edges)
        senders.append(g.senders + v_off)
        receivers.append(g.receivers + v_off)
        node_graph.append(g.node_graph + g_off)
        edge_graph.append(g.edge_graph + g_off)
        v_off += _rows(g.vertices)
        g_off += g.num_graphs
    return GNGraph(
        globals_=np.concatenate(globals_),
        vertices=np.concatenate(vertices),
        edges=np.concatenate(edges),
        senders=np.concatenate(senders),
        receivers=np.concatenate(receivers),
        node_graph=np.concatenate(node_graph),
        edge_graph=np.concatenate(edge_graph),
    )


def _as_t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def gn_block_manifest(prefix: str, d_in: tuple[int, int, int], d_out: tuple[int, int, int],
                      hidden: list[int]) -> Manifest:
    """Manifest for a full GN block: (edge, vertex, global) in/out widths."""
    d_e, d_v, d_u = d_in
    oe, ov, ou = d_out
    m: Manifest = []
    m += mlp_manifest(f"{prefix}.phi_e", [d_e + 2 * d_v + d_u, *hidden, oe])
    m += mlp_manifest(f"{prefix}.phi_v", [oe + d_v + d_u, *hidden, ov])
    m += mlp_manifest(f"{prefix}.phi_u", [oe + ov + d_u, *hidden, ou])
    return m


def gn_block_forward(bound: BoundParams, prefix: str, g: GNGraph) -> GNGraph:
    """Full graph-network block with sum aggregation.

    (1) e'_k = phi_e([e_k, v_recv, v_send, u]); (2) v'_i = phi_v([sum of
    incoming e', v_i, u]); (3) u' = phi_u([sum e', sum v', u]).
    """
    u = _as_t(g.globals_)
    v = _as_t(g.vertices)
    e = _as_t(g.edges)
    n_v = _rows(v)
    n_g = _rows(u)

    u_per_edge = ad.gather_rows(u, g.edge_graph)
    e_in = ad.concat([e, ad.gather_rows(v, g.receivers),
                      ad.gather_rows(v, g.senders), u_per_edge], axis=1)
    e2 = mlp_forward(bound, f"{prefix}.phi_e", e_in)

    agg_e_v = ad.segment_sum(e2, g.receivers, n_v)
    v_in = ad.concat([agg_e_v, v, ad.gather_rows(u, g.node_graph)], axis=1)
    v2 = mlp_forward(bound, f"{prefix}.phi_v", v_in)

    agg_e_g = ad.segment_sum(e2, g.edge_graph, n_g)
    agg_v_g = ad.segment_sum(v2, g.node_graph, n_g)
    u2 = mlp_forward(bound, f"{prefix}.phi_u", ad.concat([agg_e_g, agg_v_g, u], axis=1))

    return replace(g, globals_=u2, vertices=v2, edges=e2)


def independent_block_manifest(prefix: str, d_in: tuple[int, int, int],
                               d_out: tuple[int, int, int],
                               hidden: list[int] | None = None) -> Manifest:
    hidden = hidden or []
    m: Manifest = []
    for part, di, do in zip(("phi_e", "phi_v", "phi_u"), d_in, d_out):
        m += mlp_manifest(f"{prefix}.{part}", [di, *hidden, do])
    return m


def independent_block_forward(bound: BoundParams, prefix: str, g: GNGraph) -> GNGraph:
    """Per-attribute MLPs with no message passing (used for encode/decode)."""
    return replace(
        g,
        globals_=mlp_forward(bound, f"{prefix}.phi_u", _as_t(g.globals_)),
        vertices=mlp_forward(bound, f"{prefix}.phi_v", _as_t(g.vertices)),
        edges=mlp_forward(bound, f"{prefix}.phi_e", _as_t(g.edges)),
    )


def encode_process_decode_manifest(d_in: tuple[int, int, int], d_out: tuple[int, int, int],
                                   latent: int = 32, core_hidden: list[int] | None = None) -> Manifest:
    core_hidden = [latent] if core_hidden is None else core_hidden
    lat3 = (latent, latent, latent)
    m: Manifest = []
    m += independent_block_manifest("enc", d_in, lat3)
    m += gn_block_manifest("core", (2 * latent, 2 * latent, 2 * latent), lat3, core_hidden)
    m += independent_block_manifest("dec", lat3, d_out)
    return m


def encode_process_decode_forward(bound: BoundParams, g: GNGraph, steps: int) -> GNGraph:
    """Encode once, run the core block `steps` times on concat(encoded, previous), decode once."""
    if steps < 1:
        raise ShapeError("steps must be >= 1")
    enc = independent_block_forward(bound, "enc", g)
    prev = enc
    for _ in range(steps):
        core_in = replace(
            g,
            globals_=ad.concat([_as_t(enc.globals_), _as_t(prev.globals_)], axis=1),
            vertices=ad.concat([_as_t(enc.vertices), _as_t(prev.vertices)], axis=1),
            edges=ad.concat([_as_t(enc.edges), _as_t(prev.edges)], axis=1),
        )
        prev = gn_block_forward(bound, "core", core_in)
    return independent_block_forward(bound, "dec", prev)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(store: ParamStore, path_prefix: str | Path, extra: dict | None = None) -> None:
    """Write `<prefix>.manifest.json` and `<prefix>.params.bin` (little-endian f64)."""
    prefix = Path(path_prefix)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "manifest": [[name, list(shape)] for name, shape in store.manifest],
        "extra": extra or {},
    }
    prefix.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=2))
    blob = struct.pack(f"<{store.size}d", *store.values)
    prefix.with_suffix(".params.bin").write_bytes(blob)


def load_checkpoint(path_prefix: str | Path) -> tuple[ParamStore, dict]:
    prefix = Path(path_prefix)
    meta = json.loads(prefix.with_suffix(".manifest.json").read_text())
    if meta["version"] != CHECKPOINT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {meta['version']}")
    manifest = [(name, tuple(shape)) for name, shape in meta["manifest"]]
    blob = prefix.with_suffix(".params.bin").read_bytes()
    n = len(blob) // 8
    values = np.array(struct.unpack(f"<{n}d", blob))
    return ParamStore(manifest, values), meta.get("extra", {})
