"""Command-line orchestration: demand generation, oracle solving, routing,
training, evaluation, and comparison tables with rendered figures."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from . import demands as dg
from . import plots
from .config import ConfigError
from .env import RoutingEnv, make_sequence_pools
from .graph import simulate_routing
from .lp import solve_optimal_umax, write_lp_text
from .policies import Policy
from .softmin import softmin_routing
from .trainer import evaluate, train_loop, write_metrics_csv

EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def _load(config, seed, overrides, topology=None, policy=None, out=None):
    extra: dict = {}
    for item in overrides:
        cfgmod.deep_update(extra, cfgmod.parse_override(item))
    if seed is not None:
        extra["seed"] = seed
    if topology:
        cfgmod.deep_update(extra, {"topology": {"files": list(topology)}})
    if policy:
        cfgmod.deep_update(extra, {"policy": {"kind": policy}})
    if out:
        extra["out"] = out
    return cfgmod.load_config(config, extra)


common_options = [
    click.option("--config", type=click.Path(exists=True), default=None,
                 help="YAML config file; flags override file values."),
    click.option("--seed", type=int, default=None),
    click.option("--topology", multiple=True, type=click.Path(exists=True),
                 help="GraphML topology file (repeatable)."),
    click.option("--out", type=click.Path(), default=None, help="Output directory."),
    click.option("--override", "overrides", multiple=True,
                 help="Config override, e.g. --override ppo.learning_rate=1e-4"),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@click.group()
def cli():
    """Traffic-engineering lab: learned intradomain routing."""


@cli.command("gen-demands")
@with_common
def cmd_gen_demands(config, seed, topology, out, overrides):
    """Generate cyclical bimodal demand sequences plus a train/test index."""
    cfg = _load(config, seed, overrides, topology=topology, out=out)
    nets = cfgmod.build_topologies(cfg)
    env_cfg = cfgmod.build_env_config(cfg, nets)
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    pools = make_sequence_pools(env_cfg)
    index: dict = {"topologies": []}
    for i, (train, test) in enumerate(pools):
        entry = {"topology": i, "train": [], "test": []}
        for kind, seqs in (("train", train), ("test", test)):
            for j, seq in enumerate(seqs):
                name = f"topo{i}_{kind}_{j:03d}.json"
                (out_dir / name).write_text(dg.sequence_to_json(seq))
                entry[kind].append(name)
        index["topologies"].append(entry)
    (out_dir / "index.json").write_text(json.dumps(index, indent=2))
    cfgmod.write_resolved_config(cfg, out_dir)
    click.echo(f"wrote {sum(len(e['train']) + len(e['test']) for e in index['topologies'])} "
               f"sequences to {out_dir}")


@cli.command("solve")
@with_common
@click.option("--demands", "demands_file", type=click.Path(exists=True), required=True,
              help="Demand sequence JSON file.")
@click.option("--lp-dump", type=click.Path(), default=None,
              help="Directory for CPLEX-LP text dumps, one per timestep.")
def cmd_solve(config, seed, topology, out, overrides, demands_file, lp_dump):
    """Optimal max-link-utilisation per timestep of a demand sequence."""
    cfg = _load(config, seed, overrides, topology=topology, out=out)
    net = cfgmod.build_topologies(cfg)[0]
    seq = dg.sequence_from_json(Path(demands_file).read_text())
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for t, dm in enumerate(seq.matrices):
        sol = solve_optimal_umax(net, dm)
        rows.append({"timestep": t, "u_max_optimal": sol.u_max_optimal,
                     "status": sol.status})
        if lp_dump:
            Path(lp_dump).mkdir(parents=True, exist_ok=True)
            write_lp_text(net, dm, Path(lp_dump) / f"timestep_{t:04d}.lp")
    _write_csv(rows, out_dir / "optimal_umax.csv")
    cfgmod.write_resolved_config(cfg, out_dir)
    click.echo(f"wrote {out_dir / 'optimal_umax.csv'}")


@cli.command("route")
@with_common
@click.option("--weights", "weights_file", type=click.Path(exists=True), required=True,
              help='JSON {"weights": [[tail, head, w], ...], "gamma": g}.')
@click.option("--demands", "demands_file", type=click.Path(exists=True), required=True)
@click.option("--timestep", type=int, default=0)
def cmd_route(config, seed, topology, out, overrides, weights_file, demands_file, timestep):
    """Translate edge weights into a routing and report link utilisations."""
    cfg = _load(config, seed, overrides, topology=topology, out=out)
    net = cfgmod.build_topologies(cfg)[0]
    payload = json.loads(Path(weights_file).read_text())
    weights = {(int(u), int(v)): float(w) for u, v, w in payload["weights"]}
    gamma = float(payload.get("gamma", cfg["decode"]["gamma_fixed"]))
    seq = dg.sequence_from_json(Path(demands_file).read_text())
    dm = seq.matrices[timestep]

    routing = softmin_routing(net, weights, gamma, dm)
    report = simulate_routing(net, dm, routing)
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    result = {
        "routing": {f"{s}->{t}": {f"{u}->{v}": r for (u, v), r in edges.items()}
                    for (s, t), edges in routing.ratios.items()},
        "utilisation": {f"{u}->{v}": val for (u, v), val in report.utilisation.items()},
        "u_max": report.u_max,
    }
    (out_dir / "routing.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    cfgmod.write_resolved_config(cfg, out_dir)
    click.echo(f"u_max = {report.u_max}")


@cli.command("train")
@with_common
@click.option("--policy", type=click.Choice(["mlp", "gnn", "gnn-iter"]), default=None)
def cmd_train(config, seed, topology, out, overrides, policy):
    """Train a policy; writes metrics CSV, checkpoints, and a learning curve."""
    kind = policy.replace("-", "_") if policy else None
    cfg = _load(config, seed, overrides, topology=topology, policy=kind, out=out)
    nets = cfgmod.build_topologies(cfg)
    env_cfg = cfgmod.build_env_config(cfg, nets)
    pol_cfg = cfgmod.build_policy_config(cfg, nets[0])
    ppo_cfg = cfgmod.build_ppo_config(cfg)

    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([cfg["seed"], 0x51])
    agent = Policy.create(pol_cfg, rng, learn_std=ppo_cfg.learn_std,
                          init_log_std=ppo_cfg.log_std)
    env = RoutingEnv(env_cfg, train=True)
    rows = train_loop(agent, env, ppo_cfg,
                      metrics_path=out_dir / "metrics.csv",
                      checkpoint_dir=out_dir)
    plots.render_learning_curve(rows, out_dir / "learning_curve.png")
    cfgmod.write_resolved_config(cfg, out_dir)
    click.echo(f"trained {ppo_cfg.steps_total} steps; outputs in {out_dir}")


@cli.command("eval")
@with_common
@click.option("--checkpoint", type=click.Path(), required=True,
              help="Checkpoint path prefix (without .manifest.json).")
@click.option("--episodes", type=int, default=None)
def cmd_eval(config, seed, topology, out, overrides, checkpoint, episodes):
    """Evaluate a checkpoint on held-out sequences against the baseline."""
    cfg = _load(config, seed, overrides, topology=topology, out=out)
    nets = cfgmod.build_topologies(cfg)
    env_cfg = cfgmod.build_env_config(cfg, nets)
    agent = Policy.load(checkpoint)
    n_episodes = episodes if episodes is not None else cfg["eval"]["episodes"]

    report = evaluate(agent, env_cfg, n_episodes)
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [{"policy": agent.cfg.kind, "topology": r["topology"], "sequence": r["sequence"],
             "mean_ratio": r["mean_ratio"],
             "shortest_path_ratio": r["shortest_path_ratio"]} for r in report.rows]
    _write_csv(rows, out_dir / "eval.csv")
    cfgmod.write_resolved_config(cfg, out_dir)
    click.echo(f"mean ratio {report.mean_ratio:.4f} "
               f"(shortest path {report.shortest_path_ratio:.4f})")


@cli.command("compare")
@click.argument("eval_csvs", nargs=-1, type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
def cmd_compare(eval_csvs, out):
    """Merge evaluation CSVs into one table and render the ratio bar figure."""
    required = {"policy", "mean_ratio", "shortest_path_ratio"}
    merged = []
    for path in eval_csvs:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = required - set(reader.fieldnames or [])
            if missing:
                raise ConfigError(f"{path}: missing column(s) {sorted(missing)}")
            rows = list(reader)
        by_policy: dict[str, list[dict]] = {}
        for r in rows:
            by_policy.setdefault(r["policy"], []).append(r)
        for policy, prows in sorted(by_policy.items()):
            merged.append({
                "policy": policy,
                "scenario": Path(path).stem,
                "mean_ratio": float(np.mean([float(r["mean_ratio"]) for r in prows])),
                "shortest_path_ratio": float(np.mean(
                    [float(r["shortest_path_ratio"]) for r in prows])),
            })
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(merged, out_dir / "compare.csv")
    plots.render_compare_bars(merged, out_dir / "compare.png")
    click.echo(f"wrote {out_dir / 'compare.csv'}")


def _write_csv(rows: list[dict], path: Path) -> None:
    write_metrics_csv(rows, path)


def main() -> None:
    try:
        cli.main(standalone_mode=False)
    except (ConfigError,) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(EXIT_RUNTIME_ERROR)
    except Exception as exc:  # noqa: BLE001 - uniform runtime exit code
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME_ERROR)


if __name__ == "__main__":
    main()
