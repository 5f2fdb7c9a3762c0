"""Step-based routing environment: observations from demand history, actions
decoded into routings, rewards scored against the LP optimum."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .demands import BimodalParams, DemandSequence, gen_cyclical_sequence
from .graph import Network, Routing, flows_from_demands, simulate_routing
from .lp import solve_optimal_umax
from .policies import EdgeState, Observation, WeightDecodeConfig, decode_action_to_weights
from .softmin import dijkstra_to_sink, softmin_routing


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    topologies: tuple[Network, ...]
    memory_length: int = 5
    cycle_length: int = 10
    sequence_length: int = 60
    bimodal: BimodalParams = field(default_factory=BimodalParams)
    mode: str = "single_shot"  # single_shot | iterative
    decode: WeightDecodeConfig = field(default_factory=WeightDecodeConfig)
    seed: int = 0
    num_train_sequences: int = 7
    num_test_sequences: int = 3

    def __post_init__(self):
        if not self.topologies:
            raise EnvError("at least one topology required")
        if self.memory_length < 1:
            raise EnvError("memory_length must be >= 1")
        if self.sequence_length <= self.memory_length:
            raise EnvError("sequence_length must exceed memory_length")
        if self.mode not in ("single_shot", "iterative"):
            raise EnvError(f"unknown mode {self.mode!r}")
        if self.num_train_sequences < 1 or self.num_test_sequences < 0:
            raise EnvError("sequence pool sizes invalid")


@dataclass(frozen=True)
class StepResult:
    observation: Observation | None
    reward: float
    done: bool
    info: dict[str, Any]


def make_sequence_pools(cfg: EnvConfig) -> list[tuple[list[DemandSequence], list[DemandSequence]]]:
    """Per-topology (train, test) demand sequence pools, deterministic in cfg.seed."""
    pools = []
    for i, net in enumerate(cfg.topologies):
        rng = np.random.default_rng([cfg.seed, i, 0xD3])
        seqs = [
            gen_cyclical_sequence(net.vertex_count, cfg.bimodal, cfg.cycle_length,
                                  cfg.sequence_length, rng)
            for _ in range(cfg.num_train_sequences + cfg.num_test_sequences)
        ]
        pools.append((seqs[:cfg.num_train_sequences], seqs[cfg.num_train_sequences:]))
    return pools


class RoutingEnv:
    """Gym-convention reset/step environment (in-process, strictly sequential)."""

    def __init__(self, cfg: EnvConfig, train: bool = True,
                 pools: list[tuple[list[DemandSequence], list[DemandSequence]]] | None = None):
        self.cfg = cfg
        self.train = train
        self.pools = pools if pools is not None else make_sequence_pools(cfg)
        self._rng = np.random.default_rng([cfg.seed, 0xEB])
        self._lp_cache: dict[tuple[int, int, int, int], float] = {}
        self._net: Network | None = None
        self._seq: DemandSequence | None = None
        self._topo_idx = 0
        self._seq_idx = 0
        self._t = 0
        self._done = True
        self._edge_weights: np.ndarray | None = None
        self._edge_set: np.ndarray | None = None
        self._iteration = 0

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int | None = None) -> Observation:
        if seed is not None:
            self._rng = np.random.default_rng([self.cfg.seed, seed, 0xEB])
        self._topo_idx = int(self._rng.integers(len(self.cfg.topologies)))
        pool = self.pools[self._topo_idx][0 if self.train else 1]
        self._seq_idx = int(self._rng.integers(len(pool)))
        self._net = self.cfg.topologies[self._topo_idx]
        self._seq = pool[self._seq_idx]
        self._t = self.cfg.memory_length
        while self._t < len(self._seq) and not flows_from_demands(self._seq.matrices[self._t]):
            self._t += 1
        if self._t >= len(self._seq):
            raise EnvError("demand sequence has no scorable timestep")
        self._done = False
        self._reset_edge_state()
        return self._observation()

    def _reset_edge_state(self) -> None:
        if self.cfg.mode == "iterative":
            n_e = self._net.edge_count
            self._edge_weights = np.zeros(n_e)
            self._edge_set = np.zeros(n_e)
            self._iteration = 0

    def _observation(self) -> Observation:
        history = tuple(self._seq.matrices[self._t - self.cfg.memory_length:self._t])
        edge_state = None
        if self.cfg.mode == "iterative":
            edge_state = EdgeState(weights=self._edge_weights.copy(),
                                   set_flags=self._edge_set.copy(),
                                   target_index=self._iteration)
        return Observation(network=self._net, history=history, edge_state=edge_state)

    # -- scoring ------------------------------------------------------------

    def optimal_umax(self, t: int) -> float:
        pool_flag = 0 if self.train else 1
        key = (self._topo_idx, pool_flag * 1000 + self._seq_idx, t % self._seq.cycle_length, 0)
        if key not in self._lp_cache:
            sol = solve_optimal_umax(self._net, self._seq.matrices[t])
            if sol.status != "optimal":
                raise EnvError(f"LP solve failed with status {sol.status}")
            self._lp_cache[key] = sol.u_max_optimal
        return self._lp_cache[key]

    def _score(self, weights: dict, gamma: float) -> tuple[float, dict[str, Any]]:
        dm = self._seq.matrices[self._t]
        u_opt = self.optimal_umax(self._t)
        routing = softmin_routing(self._net, weights, gamma, dm)
        u_agent = simulate_routing(self._net, dm, routing).u_max
        reward = -u_agent / u_opt
        info = {"u_max_agent": u_agent, "u_max_optimal": u_opt, "timestep": self._t}
        return reward, info

    def _advance(self) -> bool:
        """Move to the next scorable timestep; returns done. Zero-demand
        timesteps are skipped outright (their optimum is zero)."""
        self._t += 1
        while self._t < len(self._seq) and not flows_from_demands(self._seq.matrices[self._t]):
            self._t += 1
        self._done = self._t >= len(self._seq)
        return self._done

    def step(self, action: np.ndarray) -> StepResult:
        if self._done:
            raise EnvError("step after done; call reset first")
        action = np.asarray(action, dtype=float)
        if not np.all(np.isfinite(action)):
            raise EnvError("non-finite action")

        if self.cfg.mode == "single_shot":
            weights, gamma = decode_action_to_weights(action, self._net, "single_shot",
                                                      self.cfg.decode)
            reward, info = self._score(weights, gamma)
            done = self._advance()
            obs = None if done else self._observation()
            return StepResult(obs, reward, done, info)

        # iterative: one edge per call, score on the last edge
        if action.shape != (2,):
            raise EnvError(f"iterative mode expects a 2-vector action, got {action.shape}")
        self._edge_weights[self._iteration] = np.clip(action[0], -1.0, 1.0)
        self._edge_set[self._iteration] = 1.0
        self._iteration += 1
        if self._iteration < self._net.edge_count:
            info = {"timestep": self._t, "iteration": self._iteration}
            return StepResult(self._observation(), 0.0, False, info)

        full = np.concatenate([self._edge_weights, [action[1]]])
        weights, gamma = decode_action_to_weights(full, self._net, "iterative",
                                                  self.cfg.decode)
        reward, info = self._score(weights, gamma)
        info["iteration"] = self._iteration
        done = self._advance()
        self._reset_edge_state()
        obs = None if done else self._observation()
        return StepResult(obs, reward, done, info)


def shortest_path_routing(net: Network, demands: np.ndarray) -> Routing:
    """All traffic of each flow on its unit-weight shortest path.

    Deterministic tie-break: at each vertex the lowest-id successor that stays
    on a shortest path is taken.
    """
    unit = {e: 1.0 for e in net.edges}
    ratios = {}
    dist_cache: dict[int, dict[int, float]] = {}
    for flow in flows_from_demands(np.asarray(demands, dtype=float)):
        s, t = flow.source, flow.sink
        if t not in dist_cache:
            dist_cache[t] = dijkstra_to_sink(net, unit, t)
        dist = dist_cache[t]
        if s not in dist:
            raise EnvError(f"flow ({s},{t}) cannot reach its sink")
        path_ratios = {}
        v = s
        while v != t:
            nxt = None
            for (_, u) in net.out_edges[v]:
                if u in dist and abs(dist[v] - (1.0 + dist[u])) <= 1e-12:
                    nxt = u if nxt is None else min(nxt, u)
            path_ratios[(v, nxt)] = 1.0
            v = nxt
        ratios[(s, t)] = path_ratios
    return Routing(ratios=ratios)
