import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from routelab.cli import cli
from routelab.config import (
    ConfigError,
    build_policy_config,
    load_config,
    parse_override,
)

BASE_CONFIG = {
    "topology": {
        "inline": {
            "vertex_count": 3,
            "edges": [[0, 1, 1.0], [1, 2, 1.0], [0, 2, 1.0]],
        },
    },
    "env": {
        "memory_length": 2,
        "cycle_length": 3,
        "sequence_length": 8,
        "num_train_sequences": 2,
        "num_test_sequences": 1,
    },
    "policy": {"kind": "gnn", "latent": 4, "message_steps": 1},
    "ppo": {"steps_total": 12, "rollout_length": 6, "minibatch_size": 6, "epochs": 1},
    "eval": {"episodes": 2},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(BASE_CONFIG))
    return path


def run(args):
    result = CliRunner().invoke(cli, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestConfigModule:
    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError, match="env.nope"):
            load_config(None, {"env": {"nope": 1}})

    def test_parse_override_nested_yaml_values(self):
        assert parse_override("ppo.learning_rate=1e-4") == {
            "ppo": {"learning_rate": 1e-4}}
        assert parse_override("policy.mlp_hidden=[8, 8]") == {
            "policy": {"mlp_hidden": [8, 8]}}
        with pytest.raises(ConfigError, match="key=value"):
            parse_override("garbage")

    def test_flag_overrides_beat_file(self, config_file):
        cfg = load_config(config_file, {"seed": 42})
        assert cfg["seed"] == 42
        assert cfg["env"]["cycle_length"] == 3       # from file
        assert cfg["env"]["mode"] == "single_shot"   # default preserved

    def test_mode_policy_pairing_enforced(self, config_file, triangle):
        cfg = load_config(config_file, {"env": {"mode": "iterative"}})
        with pytest.raises(ConfigError, match="gnn_iter"):
            build_policy_config(cfg, triangle)
        cfg2 = load_config(config_file, {"policy": {"kind": "gnn_iter"}})
        with pytest.raises(ConfigError, match="iterative"):
            build_policy_config(cfg2, triangle)


class TestGenDemands:
    def test_writes_sequences_and_index(self, config_file, tmp_path):
        out = tmp_path / "dm"
        run(["gen-demands", "--config", str(config_file), "--out", str(out)])
        index = json.loads((out / "index.json").read_text())
        entry = index["topologies"][0]
        assert len(entry["train"]) == 2
        assert len(entry["test"]) == 1
        for name in entry["train"] + entry["test"]:
            assert (out / name).exists()
        assert (out / "resolved_config.yaml").exists()

    def test_rerun_byte_identical(self, config_file, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run(["gen-demands", "--config", str(config_file), "--out", str(out_a)])
        run(["gen-demands", "--config", str(config_file), "--out", str(out_b)])
        name = "topo0_train_000.json"
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_seed_changes_output(self, config_file, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run(["gen-demands", "--config", str(config_file), "--out", str(out_a)])
        run(["gen-demands", "--config", str(config_file), "--out", str(out_b),
             "--seed", "1"])
        name = "topo0_train_000.json"
        assert (out_a / name).read_bytes() != (out_b / name).read_bytes()


@pytest.fixture
def demands_file(config_file, tmp_path):
    out = tmp_path / "dm"
    run(["gen-demands", "--config", str(config_file), "--out", str(out)])
    return out / "topo0_train_000.json"


class TestSolve:
    def test_per_timestep_csv_and_lp_dump(self, config_file, demands_file, tmp_path):
        out = tmp_path / "solve"
        dump = tmp_path / "lps"
        run(["solve", "--config", str(config_file), "--out", str(out),
             "--demands", str(demands_file), "--lp-dump", str(dump)])
        lines = (out / "optimal_umax.csv").read_text().strip().splitlines()
        assert lines[0] == "timestep,u_max_optimal,status"
        assert len(lines) == 1 + 8  # header + sequence_length rows
        assert all(line.endswith("optimal") for line in lines[1:])
        assert (dump / "timestep_0000.lp").exists()


class TestRoute:
    def test_routing_json(self, config_file, demands_file, tmp_path):
        weights = tmp_path / "weights.json"
        payload = {"weights": [[0, 1, 1.0], [1, 0, 1.0], [1, 2, 1.0],
                               [2, 1, 1.0], [0, 2, 2.0], [2, 0, 2.0]],
                   "gamma": 2.0}
        weights.write_text(json.dumps(payload))
        out = tmp_path / "route"
        result = run(["route", "--config", str(config_file), "--out", str(out),
                      "--weights", str(weights), "--demands", str(demands_file),
                      "--timestep", "2"])
        assert "u_max" in result.output
        data = json.loads((out / "routing.json").read_text())
        assert data["u_max"] > 0
        assert data["routing"]
        # ratios out of each splitting vertex sum to one
        for edges in data["routing"].values():
            by_tail = {}
            for key, r in edges.items():
                by_tail.setdefault(key.split("->")[0], []).append(r)
            for vals in by_tail.values():
                assert sum(vals) == pytest.approx(1.0)


class TestTrainEval:
    def test_train_then_eval_and_compare(self, config_file, tmp_path):
        train_out = tmp_path / "train"
        run(["train", "--config", str(config_file), "--out", str(train_out),
             "--policy", "gnn"])
        assert (train_out / "metrics.csv").exists()
        assert (train_out / "learning_curve.png").exists()
        assert (train_out / "checkpoint_final.params.bin").exists()
        resolved = yaml.safe_load((train_out / "resolved_config.yaml").read_text())
        assert resolved["tool_version"]
        assert resolved["policy"]["kind"] == "gnn"
        lines = (train_out / "metrics.csv").read_text().strip().splitlines()
        assert lines[0].startswith("step,mean_reward,mean_ratio")
        assert len(lines) == 3  # header + 2 updates (12 steps / 6 rollout)

        eval_out = tmp_path / "eval"
        result = run(["eval", "--config", str(config_file), "--out", str(eval_out),
                      "--checkpoint", str(train_out / "checkpoint_final"),
                      "--episodes", "2"])
        assert "mean ratio" in result.output
        lines = (eval_out / "eval.csv").read_text().strip().splitlines()
        assert lines[0] == "policy,topology,sequence,mean_ratio,shortest_path_ratio"
        assert len(lines) == 3

        cmp_out = tmp_path / "cmp"
        run(["compare", str(eval_out / "eval.csv"), "--out", str(cmp_out)])
        assert (cmp_out / "compare.csv").exists()
        assert (cmp_out / "compare.png").exists()
        header = (cmp_out / "compare.csv").read_text().splitlines()[0]
        assert header == "policy,scenario,mean_ratio,shortest_path_ratio"

    def test_compare_schema_enforced(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("policy,mean_ratio\ngnn,1.2\n")
        with pytest.raises(ConfigError, match="missing column"):
            CliRunner().invoke(cli, ["compare", str(bad), "--out", str(tmp_path / "o")],
                               catch_exceptions=False)


def run_main(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "routelab.cli", *args],
        capture_output=True, text=True, cwd=cwd)


class TestExitCodes:
    def test_config_error_exits_2(self, config_file, tmp_path):
        proc = run_main(["gen-demands", "--config", str(config_file),
                         "--override", "not_a_key=1"], cwd=tmp_path)
        assert proc.returncode == 2
        assert "config error" in proc.stderr

    def test_usage_error_exits_2(self, tmp_path):
        proc = run_main(["solve"], cwd=tmp_path)  # missing required --demands
        assert proc.returncode == 2

    def test_runtime_error_exits_3(self, config_file, tmp_path):
        # sequence shorter than the memory window fails environment validation
        proc = run_main(["gen-demands", "--config", str(config_file),
                         "--override", "env.sequence_length=1",
                         "--out", str(tmp_path / "x")], cwd=tmp_path)
        assert proc.returncode == 3
        assert "error" in proc.stderr
