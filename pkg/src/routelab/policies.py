"""Agent architectures: MLP baseline, single-shot GNN, and iterative GNN."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .graph import Edge, Network
from .nn import BoundParams, GNGraph, ParamStore, ShapeError


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeState:
    """Iterative-mode edge annotations in canonical edge order."""

    weights: np.ndarray    # squashed values in [-1,1]; 0 when unset
    set_flags: np.ndarray  # 0/1
    target_index: int


@dataclass(frozen=True)
class Observation:
    network: Network
    history: tuple[np.ndarray, ...]  # oldest first
    edge_state: EdgeState | None = None


def build_observation_gnn(history: Sequence[np.ndarray]) -> np.ndarray:
    """Per-vertex (out-sum, in-sum) for each history step, each step normalised
    by that step's total demand (zero total gives zero features)."""
    if not history:
        raise ShapeError("history must contain at least one matrix")
    v = history[0].shape[0]
    cols = []
    for dm in history:
        if dm.shape != (v, v):
            raise ShapeError("mixed demand matrix sizes in history")
        total = dm.sum()
        scale = 1.0 / total if total > 0 else 0.0
        cols.append(dm.sum(axis=1) * scale)
        cols.append(dm.sum(axis=0) * scale)
    return np.stack(cols, axis=1)


def build_observation_mlp(history: Sequence[np.ndarray]) -> np.ndarray:
    """Flattened demand history, each matrix normalised by its total."""
    if not history:
        raise ShapeError("history must contain at least one matrix")
    v = history[0].shape[0]
    parts = []
    for dm in history:
        if dm.shape != (v, v):
            raise ShapeError("mixed demand matrix sizes in history")
        total = dm.sum()
        parts.append((dm / total if total > 0 else dm).reshape(-1))
    return np.concatenate(parts)


def _edge_arrays(net: Network) -> tuple[np.ndarray, np.ndarray]:
    senders = np.array([e[0] for e in net.edges], dtype=np.intp)
    receivers = np.array([e[1] for e in net.edges], dtype=np.intp)
    return senders, receivers


@dataclass(frozen=True)
class PolicyConfig:
    kind: str                      # mlp | gnn | gnn_iter
    memory_length: int
    latent: int = 32
    message_steps: int = 3
    mlp_hidden: tuple[int, ...] = (64, 64)
    # only the MLP baseline is pinned to one topology
    vertex_count: int | None = None
    edge_count: int | None = None

    def __post_init__(self):
        if self.kind not in ("mlp", "gnn", "gnn_iter"):
            raise PolicyError(f"unknown policy kind {self.kind!r}")
        if self.memory_length < 1:
            raise PolicyError("memory_length must be >= 1")
        if self.kind == "mlp" and (self.vertex_count is None or self.edge_count is None):
            raise PolicyError("mlp policy requires vertex_count and edge_count")


class Policy:
    """Maps observations to (action means, value). Subclasses define the graph
    or vector encoding; sampling lives in the trainer."""

    def __init__(self, cfg: PolicyConfig, store: ParamStore):
        self.cfg = cfg
        self.store = store

    @classmethod
    def create(cls, cfg: PolicyConfig, rng: np.random.Generator,
               learn_std: bool = False, init_log_std: float = -0.5) -> "Policy":
        impl = {"mlp": MlpPolicy, "gnn": GnnPolicy, "gnn_iter": IterativePolicy}[cfg.kind]
        manifest = impl.manifest(cfg)
        if learn_std:
            manifest = manifest + [("log_std", (1,))]
        store = ParamStore.init_random(manifest, rng)
        if learn_std:
            store.slice("log_std")[:] = init_log_std
        return impl(cfg, store)

    def forward(self, bound: BoundParams, obs: Observation) -> tuple[Tensor, Tensor]:
        means, _, values = self.batch_forward(bound, [obs])
        return means, values

    def batch_forward(self, bound: BoundParams, obs_list: list[Observation]):
        """Returns (flat action means, per-dim sample ids, per-sample values)."""
        raise NotImplementedError

    def action_dim(self, obs: Observation) -> int:
        raise NotImplementedError

    def save(self, path_prefix) -> None:
        extra = {
            "kind": self.cfg.kind,
            "memory_length": self.cfg.memory_length,
            "latent": self.cfg.latent,
            "message_steps": self.cfg.message_steps,
            "mlp_hidden": list(self.cfg.mlp_hidden),
            "vertex_count": self.cfg.vertex_count,
            "edge_count": self.cfg.edge_count,
        }
        nn.save_checkpoint(self.store, path_prefix, extra=extra)

    @staticmethod
    def load(path_prefix) -> "Policy":
        store, extra = nn.load_checkpoint(path_prefix)
        cfg = PolicyConfig(
            kind=extra["kind"],
            memory_length=extra["memory_length"],
            latent=extra["latent"],
            message_steps=extra["message_steps"],
            mlp_hidden=tuple(extra["mlp_hidden"]),
            vertex_count=extra["vertex_count"],
            edge_count=extra["edge_count"],
        )
        impl = {"mlp": MlpPolicy, "gnn": GnnPolicy, "gnn_iter": IterativePolicy}[cfg.kind]
        return impl(cfg, store)


class MlpPolicy(Policy):
    """Flat-history baseline; input and output widths are pinned to one topology."""

    @staticmethod
    def manifest(cfg: PolicyConfig) -> nn.Manifest:
        d_in = cfg.memory_length * cfg.vertex_count ** 2
        m = nn.mlp_manifest("trunk", [d_in, *cfg.mlp_hidden])
        m += nn.mlp_manifest("action", [cfg.mlp_hidden[-1], cfg.edge_count])
        m += nn.mlp_manifest("value", [cfg.mlp_hidden[-1], 1])
        return m

    def action_dim(self, obs: Observation) -> int:
        return self.cfg.edge_count

    def batch_forward(self, bound: BoundParams, obs_list: list[Observation]):
        rows = []
        for obs in obs_list:
            x = build_observation_mlp(obs.history)
            if x.shape[0] != self.cfg.memory_length * self.cfg.vertex_count ** 2:
                raise ShapeError(
                    f"observation width {x.shape[0]} does not match the trained topology")
            rows.append(x)
        h = ad.tanh(nn.mlp_forward(bound, "trunk", Tensor(np.stack(rows))))
        means = nn.mlp_forward(bound, "action", h)          # (B, |E|)
        values = nn.mlp_forward(bound, "value", h)          # (B, 1)
        b, n_e = means.value.shape
        dim_ids = np.repeat(np.arange(b), n_e)
        return means.reshape(-1), dim_ids, values.reshape(-1)


def _gnn_graph(obs: Observation, memory_length: int) -> GNGraph:
    feats = build_observation_gnn(obs.history)
    if feats.shape[1] != 2 * memory_length:
        raise ShapeError("history length does not match policy memory_length")
    senders, receivers = _edge_arrays(obs.network)
    if obs.edge_state is None:
        edges = np.zeros((len(senders), 1))
    else:
        st = obs.edge_state
        if st.weights.shape != (len(senders),) or st.set_flags.shape != (len(senders),):
            raise ShapeError("edge state length does not match edge count")
        target = np.zeros(len(senders))
        target[st.target_index] = 1.0
        edges = np.stack([st.weights, st.set_flags, target], axis=1)
    return nn.single_graph(np.zeros((1, 1)), feats, edges, senders, receivers)


class GnnPolicy(Policy):
    """Single-shot encode-process-decode policy: one weight per edge."""

    @staticmethod
    def manifest(cfg: PolicyConfig) -> nn.Manifest:
        d_in = (1, 2 * cfg.memory_length, 1)   # (edge, vertex, global) input widths
        d_out = (1, 1, 1)                      # edge means; global value
        return nn.encode_process_decode_manifest(d_in, d_out, latent=cfg.latent,
                                                 core_hidden=[cfg.latent])

    def action_dim(self, obs: Observation) -> int:
        return obs.network.edge_count

    def batch_forward(self, bound: BoundParams, obs_list: list[Observation]):
        graphs = [_gnn_graph(obs, self.cfg.memory_length) for obs in obs_list]
        batch = nn.batch_graphs(graphs)
        out = nn.encode_process_decode_forward(bound, batch, self.cfg.message_steps)
        means = out.edges.reshape(-1)
        values = out.globals_.reshape(-1)
        return means, batch.edge_graph, values


class IterativePolicy(Policy):
    """Sets one edge weight per action; output read from global attributes."""

    ACTION_DIM = 2  # (edge weight, gamma raw)

    @staticmethod
    def manifest(cfg: PolicyConfig) -> nn.Manifest:
        d_in = (3, 2 * cfg.memory_length, 1)
        d_out = (1, 1, 3)                      # globals: weight mean, gamma raw, value
        return nn.encode_process_decode_manifest(d_in, d_out, latent=cfg.latent,
                                                 core_hidden=[cfg.latent])

    def action_dim(self, obs: Observation) -> int:
        return self.ACTION_DIM

    def batch_forward(self, bound: BoundParams, obs_list: list[Observation]):
        for obs in obs_list:
            if obs.edge_state is None:
                raise PolicyError("iterative policy requires edge state in the observation")
            target = obs.edge_state.target_index
            if not (0 <= target < obs.network.edge_count):
                raise PolicyError("exactly one valid target edge must be flagged")
        graphs = [_gnn_graph(obs, self.cfg.memory_length) for obs in obs_list]
        batch = nn.batch_graphs(graphs)
        out = nn.encode_process_decode_forward(bound, batch, self.cfg.message_steps)
        g = out.globals_                      # (B, 3)
        means = g[:, 0:2].reshape(-1)
        values = g[:, 2]
        dim_ids = np.repeat(np.arange(len(obs_list)), self.ACTION_DIM)
        return means, dim_ids, values


# -- action decoding -------------------------------------------------------------

@dataclass(frozen=True)
class WeightDecodeConfig:
    w_min: float = 0.01
    w_max: float = 2.0
    gamma_fixed: float = 2.0
    gamma_min: float = 0.1


def squashed_to_weight(a: np.ndarray, cfg: WeightDecodeConfig) -> np.ndarray:
    return cfg.w_min + (a + 1.0) / 2.0 * (cfg.w_max - cfg.w_min)


def decode_action_to_weights(action: np.ndarray, net: Network, mode: str,
                             cfg: WeightDecodeConfig = WeightDecodeConfig(),
                             ) -> tuple[dict[Edge, float], float]:
    """Map squashed [-1,1] actions to positive edge weights plus a gamma.

    single_shot: one entry per canonical edge, gamma fixed from config.
    iterative: `action` is the per-edge squashed weight vector accumulated over
    iterations plus the raw gamma output; gamma = softplus(raw) + gamma_min.
    """
    action = np.asarray(action, dtype=float)
    if not np.all(np.isfinite(action)):
        raise PolicyError("non-finite action")
    if mode == "single_shot":
        if action.shape != (net.edge_count,):
            raise PolicyError(f"expected {net.edge_count} edge actions, got {action.shape}")
        w = squashed_to_weight(np.clip(action, -1.0, 1.0), cfg)
        gamma = cfg.gamma_fixed
    elif mode == "iterative":
        if action.shape != (net.edge_count + 1,):
            raise PolicyError("iterative decode expects edge values plus raw gamma")
        w = squashed_to_weight(np.clip(action[:-1], -1.0, 1.0), cfg)
        gamma = float(np.logaddexp(0.0, action[-1]) + cfg.gamma_min)
    else:
        raise PolicyError(f"unknown decode mode {mode!r}")
    weights = {e: float(max(wi, 1e-3)) for e, wi in zip(net.edges, w)}
    return weights, gamma
