"""Clipped policy-gradient training (PPO-style) over the routing environment."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .env import EnvConfig, RoutingEnv, shortest_path_routing
from .graph import simulate_routing
from .policies import Observation, Policy

LOG_2PI = math.log(2.0 * math.pi)


class TrainerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PpoConfig:
    steps_total: int = 50_000
    rollout_length: int = 2048
    minibatch_size: int = 256
    epochs: int = 4
    clip_eps: float = 0.2
    gamma_discount: float = 0.99
    lam_gae: float = 0.95
    learning_rate: float = 3e-4
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    log_std: float = -0.5
    learn_std: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise TrainerError("clip_eps must lie in (0,1)")
        if self.learning_rate <= 0:
            raise TrainerError("learning_rate must be positive")


@dataclass
class TrajectoryBatch:
    observations: list[Observation]
    actions_raw: list[np.ndarray]   # pre-squash Gaussian samples, one array per step
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.observations)


def _tanh_correction(u: np.ndarray) -> float:
    # log-det of the tanh squash, summed over action dims
    return float(np.sum(np.log1p(-np.tanh(u) ** 2 + 1e-12)))


def _gaussian_logp(u: np.ndarray, mean: np.ndarray, log_std: float) -> float:
    z = (u - mean) / math.exp(log_std)
    return float(np.sum(-0.5 * z ** 2 - log_std - 0.5 * LOG_2PI))


def _policy_log_std(policy: Policy, cfg: PpoConfig) -> float:
    if cfg.learn_std:
        return float(policy.store.slice("log_std")[0])
    return cfg.log_std


def collect_rollout(env: RoutingEnv, policy: Policy, length: int,
                    rng: np.random.Generator, cfg: PpoConfig,
                    obs: Observation | None = None) -> tuple[TrajectoryBatch, Observation | None]:
    """On-policy collection with tanh-squashed Gaussian actions and GAE.

    Returns the batch plus the observation to resume from (None forces reset).
    """
    log_std = _policy_log_std(policy, cfg)
    sigma = math.exp(log_std)

    observations, actions_raw = [], []
    log_probs, rewards, values, dones = [], [], [], []
    if obs is None:
        obs = env.reset()
    for _ in range(length):
        bound = policy.store.bind()
        mean_t, value_t = policy.forward(bound, obs)
        mean = mean_t.value
        u = mean + sigma * rng.standard_normal(mean.shape)
        logp = _gaussian_logp(u, mean, log_std) - _tanh_correction(u)
        result = env.step(np.tanh(u))

        observations.append(obs)
        actions_raw.append(u)
        log_probs.append(logp)
        rewards.append(result.reward)
        values.append(float(value_t.value.reshape(-1)[0]))
        dones.append(result.done)
        obs = result.observation if not result.done else env.reset()

    # bootstrap value for the cut tail
    if dones[-1]:
        tail_value = 0.0
    else:
        bound = policy.store.bind()
        _, v = policy.forward(bound, obs)
        tail_value = float(v.value.reshape(-1)[0])

    batch = TrajectoryBatch(
        observations=observations,
        actions_raw=actions_raw,
        log_probs=np.array(log_probs),
        rewards=np.array(rewards),
        values=np.array(values),
        dones=np.array(dones, dtype=bool),
    )
    _compute_gae(batch, tail_value, cfg)
    return batch, obs


def _compute_gae(batch: TrajectoryBatch, tail_value: float, cfg: PpoConfig) -> None:
    n = len(batch)
    adv = np.zeros(n)
    last = 0.0
    next_value = tail_value
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if batch.dones[t] else 1.0
        delta = batch.rewards[t] + cfg.gamma_discount * next_value * nonterminal - batch.values[t]
        last = delta + cfg.gamma_discount * cfg.lam_gae * nonterminal * last
        adv[t] = last
        next_value = batch.values[t]
    batch.advantages = adv
    batch.returns = adv + batch.values


class AdamOptimizer:
    """Gradient descent with bias-corrected per-parameter adaptive moments."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, values: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _normalized_advantages(adv: np.ndarray) -> np.ndarray:
    if adv.size < 2:
        return np.zeros_like(adv)
    std = adv.std()
    if std < 1e-12:
        return np.zeros_like(adv)
    return (adv - adv.mean()) / std


def ppo_update(policy: Policy, batch: TrajectoryBatch, cfg: PpoConfig,
               optimizer: AdamOptimizer, rng: np.random.Generator) -> dict[str, float]:
    """Clipped-surrogate update; returns averaged diagnostics over minibatches."""
    n = len(batch)
    adv_all = _normalized_advantages(batch.advantages)
    metrics = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
               "clip_fraction": 0.0, "approx_kl": 0.0}
    count = 0

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            result = _minibatch_loss(policy, batch, cfg, idx, adv_all)
            if result is None:
                metrics["aborted"] = metrics.get("aborted", 0) + 1
                continue
            loss, stats, bound = result
            loss.backward()
            grad = bound.flat_grad()
            if not np.all(np.isfinite(grad)):
                metrics["aborted"] = metrics.get("aborted", 0) + 1
                continue
            optimizer.step(policy.store.values, grad)
            for k in stats:
                metrics[k] += stats[k]
            count += 1

    if count:
        for k in ("policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl"):
            metrics[k] /= count
    return metrics


def _minibatch_loss(policy: Policy, batch: TrajectoryBatch, cfg: PpoConfig,
                    idx: np.ndarray, adv_all: np.ndarray):
    obs_list = [batch.observations[i] for i in idx]
    u_flat = np.concatenate([batch.actions_raw[i] for i in idx])
    corrections = np.array([_tanh_correction(batch.actions_raw[i]) for i in idx])
    logp_old = batch.log_probs[idx]
    adv = adv_all[idx]
    returns = batch.returns[idx]
    b = len(idx)

    bound = policy.store.bind()
    means, dim_ids, values = policy.batch_forward(bound, obs_list)
    if cfg.learn_std:
        log_std_t = bound.t("log_std").reshape(())
        sigma_inv = ad.exp(-log_std_t)
        z = (Tensor(u_flat) - means) * sigma_inv
        logp_dim = z * z * (-0.5) - log_std_t - 0.5 * LOG_2PI
    else:
        sigma = math.exp(cfg.log_std)
        z = (Tensor(u_flat) - means) * (1.0 / sigma)
        logp_dim = z * z * (-0.5) - cfg.log_std - 0.5 * LOG_2PI
    logp_new = ad.segment_sum(logp_dim.reshape(-1, 1), dim_ids, b).reshape(-1) - Tensor(corrections)

    ratio = ad.exp(logp_new - Tensor(logp_old))
    adv_t = Tensor(adv)
    surrogate = ad.minimum(ratio * adv_t,
                           ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv_t)
    policy_loss = -surrogate.mean()
    value_loss = ad.square(values - Tensor(returns)).mean()

    dims_per_sample = np.bincount(dim_ids, minlength=b).astype(float)
    if cfg.learn_std:
        entropy = (Tensor(dims_per_sample) * (0.5 * (LOG_2PI + 1.0) + log_std_t)).mean()
    else:
        entropy = Tensor(dims_per_sample * (0.5 * (LOG_2PI + 1.0) + cfg.log_std)).mean()

    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    if not np.isfinite(loss.value):
        return None

    clipped = np.abs(ratio.value - 1.0) > cfg.clip_eps
    stats = {
        "policy_loss": float(policy_loss.value),
        "value_loss": float(value_loss.value),
        "entropy": float(entropy.value if isinstance(entropy, Tensor) else entropy),
        "clip_fraction": float(clipped.mean()),
        "approx_kl": float(np.mean(logp_old - logp_new.value)),
    }
    return loss, stats, bound


def train_loop(policy: Policy, env: RoutingEnv, cfg: PpoConfig,
               metrics_path: str | Path | None = None,
               checkpoint_dir: str | Path | None = None,
               checkpoint_every: int = 10) -> list[dict[str, float]]:
    """Collect/update until steps_total environment steps; one metrics row per update."""
    rng = np.random.default_rng([cfg.seed, 0x99])
    optimizer = AdamOptimizer(policy.store.size, cfg.learning_rate)
    rows: list[dict[str, float]] = []
    steps_done = 0
    update_idx = 0
    obs: Observation | None = None

    while steps_done < cfg.steps_total:
        length = min(cfg.rollout_length, cfg.steps_total - steps_done)
        batch, obs = collect_rollout(env, policy, length, rng, cfg, obs=obs)
        steps_done += length
        metrics = ppo_update(policy, batch, cfg, optimizer, rng)
        update_idx += 1

        scored = batch.rewards[batch.rewards != 0.0]
        row = {
            "step": steps_done,
            "mean_reward": float(scored.mean()) if scored.size else 0.0,
            "mean_ratio": float(-scored.mean()) if scored.size else 0.0,
            **{k: metrics.get(k, 0.0) for k in
               ("policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl")},
        }
        rows.append(row)
        if checkpoint_dir is not None and update_idx % checkpoint_every == 0:
            policy.save(Path(checkpoint_dir) / f"checkpoint_{update_idx:05d}")

    if checkpoint_dir is not None:
        policy.save(Path(checkpoint_dir) / "checkpoint_final")
    if metrics_path is not None:
        write_metrics_csv(rows, metrics_path)
    return rows


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


@dataclass(frozen=True)
class EvalReport:
    mean_reward: float
    mean_ratio: float
    shortest_path_ratio: float
    rows: list[dict]


def evaluate(policy: Policy | None, env_cfg: EnvConfig, episodes: int,
             train_sequences: bool = False, pools=None) -> EvalReport:
    """Deterministic evaluation (actions are squashed means, no sampling).

    `policy=None` scores shortest-path routing as a pseudo-policy. The
    shortest-path baseline ratio is always computed on the same sequences.
    """
    env = RoutingEnv(env_cfg, train=train_sequences, pools=pools)
    rows = []
    all_ratios, all_rewards, all_sp = [], [], []
    for ep in range(episodes):
        obs = env.reset(seed=ep)
        ratios, rewards, sp_ratios = [], [], []
        done = False
        while not done:
            if policy is None:
                dm = env._seq.matrices[env._t]
                u_opt = env.optimal_umax(env._t)
                u_sp = simulate_routing(env._net, dm, shortest_path_routing(env._net, dm)).u_max
                ratios.append(u_sp / u_opt)
                rewards.append(-u_sp / u_opt)
                sp_ratios.append(u_sp / u_opt)
                done = env._advance()
                if not done:
                    env._reset_edge_state()
                continue
            sp = _sp_info(env)
            bound = policy.store.bind()
            mean_t, _ = policy.forward(bound, obs)
            result = env.step(np.tanh(mean_t.value))
            if "u_max_agent" in result.info:
                ratio = result.info["u_max_agent"] / result.info["u_max_optimal"]
                ratios.append(ratio)
                rewards.append(result.reward)
                sp_ratios.append(sp["sp_ratio"])
            done = result.done
            obs = result.observation
        rows.append({
            "episode": ep,
            "topology": env._topo_idx,
            "sequence": env._seq_idx,
            "mean_ratio": float(np.mean(ratios)),
            "mean_reward": float(np.mean(rewards)),
            "shortest_path_ratio": float(np.mean(sp_ratios)),
        })
        all_ratios.extend(ratios)
        all_rewards.extend(rewards)
        all_sp.extend(sp_ratios)
    return EvalReport(
        mean_reward=float(np.mean(all_rewards)),
        mean_ratio=float(np.mean(all_ratios)),
        shortest_path_ratio=float(np.mean(all_sp)),
        rows=rows,
    )


def _sp_info(env: RoutingEnv) -> dict:
    """Shortest-path ratio for the timestep the environment is about to score."""
    dm = env._seq.matrices[env._t]
    u_opt = env.optimal_umax(env._t)
    u_sp = simulate_routing(env._net, dm, shortest_path_routing(env._net, dm)).u_max
    return {"sp_ratio": u_sp / u_opt, "u_max_optimal": u_opt}
