"""End-to-end CLI runs over small workloads."""

import json
from pathlib import Path

import numpy as np
import pytest

from srmtlab import cli, maps
from srmtlab.config import config_from_dict
from srmtlab.errors import ConfigError


def run_cli(*argv) -> int:
    return cli.main(list(argv))


@pytest.fixture()
def tiny_train_config(tmp_path):
    doc = {
        "mode": "classical",
        "seed": 3,
        "output_dir": str(tmp_path / "run"),
        "num_agents": 2,
        "episode_length": 20,
        "core": "srmt",
        "reward_scheme": "directional",
        "map_source": {"kind": "bottleneck", "count": 2, "min_len": 3, "max_len": 4},
        "policy": {"filters": 2, "res_blocks": 1, "mlp_hidden": 4, "d": 4, "heads": 2},
        "ppo": {"batch_size": 96, "total_steps": 96, "workers": 1, "envs_per_worker": 2,
                "checkpoint_every": 1},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path, doc


class TestGenMaps:
    def test_bottleneck_sixteen_files(self, tmp_path):
        out = tmp_path / "maps"
        assert run_cli("gen-maps", "--kind", "bottleneck", "--lengths", "3..30",
                       "--count", "16", "--out", str(out), "--seed", "5") == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["files"]) == 16
        for entry in manifest["files"]:
            assert 3 <= entry["corridor_len"] <= 30
            grid = maps.grid_from_json_dict(json.loads((out / entry["path"]).read_text()))
            assert grid.height == 5

    def test_random_maps(self, tmp_path):
        out = tmp_path / "rnd"
        assert run_cli("gen-maps", "--kind", "random", "--size", "20", "--density", "0.3",
                       "--count", "10", "--out", str(out)) == 0
        assert len(list(out.glob("random_*.json"))) == 10

    def test_movingai_import(self, tmp_path):
        src = tmp_path / "city.map"
        src.write_text("type octile\nheight 2\nwidth 3\nmap\n.@.\n...\n")
        out = tmp_path / "imported"
        assert run_cli("gen-maps", "--kind", "movingai-import", "--in", str(src),
                       "--out", str(out)) == 0
        doc = json.loads((out / "city.json").read_text())
        grid = maps.grid_from_json_dict(doc)
        assert grid.obstacles[0, 1]

    def test_missing_input_is_config_error(self, tmp_path):
        assert run_cli("gen-maps", "--kind", "movingai-import",
                       "--out", str(tmp_path / "x")) == 2

    def test_missing_file_is_io_error(self, tmp_path):
        assert run_cli("gen-maps", "--kind", "movingai-import", "--in",
                       str(tmp_path / "absent.map"), "--out", str(tmp_path / "y")) == 4


class TestTrainCommand:
    def test_smoke_train(self, tiny_train_config):
        path, doc = tiny_train_config
        assert run_cli("train", "--config", str(path)) == 0
        run_dir = Path(doc["output_dir"])
        assert (run_dir / "checkpoints" / "latest.ckpt").exists()
        assert (run_dir / "logs" / "metrics.jsonl").exists()
        effective = json.loads((run_dir / "configs" / "effective_config.json").read_text())
        assert effective["seed"] == 3

    def test_invalid_core_name_rejected_with_all_problems(self, tmp_path):
        doc = {"core": "bogus", "reward_scheme": "nope", "unknown_key": 1}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        assert run_cli("train", "--config", str(path)) == 2
        with pytest.raises(ConfigError) as exc:
            config_from_dict(doc)
        text = "\n".join(exc.value.problems)
        assert "core" in text and "reward_scheme" in text and "unknown_key" in text

    def test_env_seed_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SRMT_SEED", "99")
        cfg = config_from_dict({"mode": "classical", "seed": 1})
        assert cfg.seed == 99


class TestEvalCommand:
    def test_sweep_writes_reports_and_figures(self, tiny_train_config, tmp_path):
        path, doc = tiny_train_config
        assert run_cli("train", "--config", str(path)) == 0
        ckpt = Path(doc["output_dir"]) / "checkpoints" / "latest.ckpt"
        out = tmp_path / "eval"
        assert run_cli("eval", "--ckpt", str(ckpt), "--sweep-corridors", "3,5",
                       "--seeds", "2", "--record-memory", "--out", str(out)) == 0
        reports = out / "reports"
        csv_text = (reports / "sweep_metrics.csv").read_text().splitlines()
        assert csv_text[0] == "corridor_len,metric,value,ci95,n"
        # one row per (length, metric)
        assert len(csv_text) == 1 + 2 * 3
        assert (reports / "sweep_metrics.png").exists()
        assert (reports / "metrics.json").exists()
        assert list(reports.glob("memory_trace_*.csv"))
        assert list(reports.glob("memory_raw_*.jsonl"))
        assert (out / "eval_config.json").exists()

    def test_eval_on_map_dir(self, tiny_train_config, tmp_path):
        path, doc = tiny_train_config
        assert run_cli("train", "--config", str(path)) == 0
        ckpt = Path(doc["output_dir"]) / "checkpoints" / "latest.ckpt"
        map_dir = tmp_path / "maps"
        assert run_cli("gen-maps", "--kind", "random", "--size", "8", "--density", "0.2",
                       "--count", "2", "--out", str(map_dir)) == 0
        out = tmp_path / "eval_maps"
        assert run_cli("eval", "--ckpt", str(ckpt), "--maps", str(map_dir),
                       "--seeds", "2", "--episode-length", "16", "--out", str(out)) == 0
        lines = (out / "reports" / "map_metrics.csv").read_text().splitlines()
        assert lines[0] == "map,metric,value,ci95,n"
        assert len(lines) == 1 + 2 * 3

    def test_eval_needs_target(self, tiny_train_config, tmp_path):
        path, doc = tiny_train_config
        assert run_cli("train", "--config", str(path)) == 0
        ckpt = Path(doc["output_dir"]) / "checkpoints" / "latest.ckpt"
        assert run_cli("eval", "--ckpt", str(ckpt), "--out", str(tmp_path / "e")) == 2


class TestAnalyzeMemory:
    def test_roundtrip_from_recorded_episode(self, tiny_train_config, tmp_path):
        path, doc = tiny_train_config
        assert run_cli("train", "--config", str(path)) == 0
        ckpt = Path(doc["output_dir"]) / "checkpoints" / "latest.ckpt"
        out = tmp_path / "eval"
        assert run_cli("eval", "--ckpt", str(ckpt), "--sweep-corridors", "3",
                       "--seeds", "1", "--record-memory", "--out", str(out)) == 0
        raw = next((out / "reports").glob("memory_raw_*.jsonl"))
        table = tmp_path / "analyzed.csv"
        assert run_cli("analyze-memory", "--trace", str(raw), "--out", str(table)) == 0
        lines = table.read_text().splitlines()
        assert lines[0] == "step,pair,cosine_distance,euclidean_distance,facing_event,first_goal_event"
        assert len(lines) > 1
        assert table.with_suffix(".png").exists()

    def test_missing_trace_is_io_error(self, tmp_path):
        assert run_cli("analyze-memory", "--trace", str(tmp_path / "none.jsonl"),
                       "--out", str(tmp_path / "o.csv")) == 4


class TestParseLengths:
    def test_comma_list(self):
        assert cli.parse_lengths("5,10,50") == [5, 10, 50]

    def test_range_expands(self):
        assert cli.parse_lengths("3..6") == [3, 4, 5, 6]

    def test_log_spaced_points(self):
        lengths = cli.parse_lengths("5..1000", points=8)
        assert lengths[0] == 5 and lengths[-1] == 1000
        assert len(lengths) == 8

    def test_bad_range(self):
        with pytest.raises(ConfigError):
            cli.parse_lengths("9..3")
