"""Run configuration: documented key set, file + flag merging, validation."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .demands import BimodalParams
from .env import EnvConfig
from .graph import build_network
from .policies import PolicyConfig, WeightDecodeConfig
from .topology import TopologySpec, load_graphml
from .trainer import PpoConfig

TOOL_VERSION = "0.1.0"


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "tool_version": TOOL_VERSION,
    "seed": 0,
    "out": "runs/default",
    "topology": {
        "files": [],
        "default_capacity": 1000.0,
        "inline": None,  # {"vertex_count": N, "edges": [[u, v, capacity], ...]} undirected
    },
    "env": {
        "memory_length": 5,
        "cycle_length": 10,
        "sequence_length": 60,
        "mode": "single_shot",
        "num_train_sequences": 7,
        "num_test_sequences": 3,
        "bimodal": {
            "low_mean": 400.0,
            "low_std": 100.0,
            "high_mean": 800.0,
            "high_std": 100.0,
            "high_prob_threshold": 0.8,
        },
    },
    "decode": {
        "w_min": 0.01,
        "w_max": 2.0,
        "gamma_fixed": 2.0,
        "gamma_min": 0.1,
    },
    "policy": {
        "kind": "gnn",
        "latent": 32,
        "message_steps": 3,
        "mlp_hidden": [64, 64],
    },
    "ppo": {
        "steps_total": 50000,
        "rollout_length": 2048,
        "minibatch_size": 256,
        "epochs": 4,
        "clip_eps": 0.2,
        "gamma_discount": 0.99,
        "lam_gae": 0.95,
        "learning_rate": 3e-4,
        "entropy_coef": 0.0,
        "value_coef": 0.5,
        "log_std": -0.5,
        "learn_std": False,
    },
    "eval": {
        "episodes": 3,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and base[key] is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where} expects a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None, overrides: dict | None = None) -> dict:
    """Defaults <- config file <- CLI overrides; unknown keys rejected."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a mapping")
        cfg = _merge(cfg, raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def parse_override(item: str) -> dict:
    """`a.b.c=value` -> nested dict with a YAML-parsed value."""
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    key, _, raw = item.partition("=")
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 leaves exponent forms like "1e-4" as strings
        try:
            value = float(value)
        except ValueError:
            pass
    out: dict = {}
    node = out
    parts = key.split(".")
    for part in parts[:-1]:
        node[part] = {}
        node = node[part]
    node[parts[-1]] = value
    return out


def deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            deep_update(base[key], value)
        else:
            base[key] = value
    return base


def build_topologies(cfg: dict) -> tuple:
    """Networks from the config's topology section (GraphML files or inline)."""
    topo = cfg["topology"]
    nets = []
    for file in topo["files"]:
        spec = TopologySpec(name=Path(file).stem, source_path=file,
                            default_capacity=topo["default_capacity"])
        nets.append(load_graphml(spec))
    if topo["inline"]:
        inline = topo["inline"]
        caps = {}
        for u, v, c in inline["edges"]:
            caps[(int(u), int(v))] = float(c)
            caps[(int(v), int(u))] = float(c)
        nets.append(build_network(inline["vertex_count"], list(caps), caps))
    if not nets:
        raise ConfigError("no topology configured (topology.files or topology.inline)")
    return tuple(nets)


def build_env_config(cfg: dict, topologies: tuple | None = None) -> EnvConfig:
    topologies = topologies or build_topologies(cfg)
    env = cfg["env"]
    return EnvConfig(
        topologies=topologies,
        memory_length=env["memory_length"],
        cycle_length=env["cycle_length"],
        sequence_length=env["sequence_length"],
        bimodal=BimodalParams(**env["bimodal"]),
        mode=env["mode"],
        decode=WeightDecodeConfig(**cfg["decode"]),
        seed=cfg["seed"],
        num_train_sequences=env["num_train_sequences"],
        num_test_sequences=env["num_test_sequences"],
    )


def build_policy_config(cfg: dict, net) -> PolicyConfig:
    pol = cfg["policy"]
    kind = pol["kind"]
    if cfg["env"]["mode"] == "iterative" and kind != "gnn_iter":
        raise ConfigError("iterative env mode requires policy.kind = gnn_iter")
    if kind == "gnn_iter" and cfg["env"]["mode"] != "iterative":
        raise ConfigError("gnn_iter policy requires env.mode = iterative")
    return PolicyConfig(
        kind=kind,
        memory_length=cfg["env"]["memory_length"],
        latent=pol["latent"],
        message_steps=pol["message_steps"],
        mlp_hidden=tuple(pol["mlp_hidden"]),
        vertex_count=net.vertex_count if kind == "mlp" else None,
        edge_count=net.edge_count if kind == "mlp" else None,
    )


def build_ppo_config(cfg: dict) -> PpoConfig:
    return PpoConfig(seed=cfg["seed"], **cfg["ppo"])


def write_resolved_config(cfg: dict, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = copy.deepcopy(cfg)
    resolved["tool_version"] = TOOL_VERSION
    (out / "resolved_config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=True))
