from __future__ import annotations

import json
import subprocess
import sys

import pytest
import yaml

from conftest import REPO_ROOT
from vlngen.cli import main
from vlngen.config import load_config
from vlngen.errors import ConfigError

DEMO_CONFIG = REPO_ROOT / "configs" / "demo_e2e.yaml"


def write_config(tmp_path, **overrides) -> str:
    data = yaml.safe_load(DEMO_CONFIG.read_text())
    data["paths"]["videos_dir"] = str(REPO_ROOT / "data" / "videos")
    data["paths"]["output_dir"] = str(tmp_path / "out")
    data.update(overrides)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


class TestConfigLoading:
    def test_bundled_demo_config_parses(self):
        cfg = load_config(DEMO_CONFIG)
        assert cfg.split.train_videos == ["demo_house"]
        assert cfg.gateway.backend == "mock-faithful"

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("nonsense: {}\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_video_dir_rejected(self, tmp_path):
        config = write_config(tmp_path, split={"train_videos": ["nope"], "val_videos": []})
        with pytest.raises(ConfigError):
            load_config(config)


class TestCli:
    def test_dry_run_prints_plan_without_writing(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["e2e", "--config", config, "--dry-run"]) == 0
        plan = json.loads(capsys.readouterr().out)
        assert plan["stages"] == ["sample", "generate", "pretext", "export"]
        assert plan["videos"] == ["demo_house"]
        assert not (tmp_path / "out").exists()

    def test_generate_before_sample_is_config_error(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["generate", "--config", config]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError"
        assert "trajectories.jsonl" in err["message"]
        assert "sample" in err["message"]

    def test_bad_config_path_is_config_error(self, capsys):
        assert main(["sample", "--config", "/nonexistent.yaml"]) == 2
        assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"

    def test_unknown_backend_override_is_config_error(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["sample", "--config", config]) == 0
        capsys.readouterr()
        assert main(["generate", "--config", config, "--backend", "bogus"]) == 2
        assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"

    def test_stage_by_stage_matches_e2e(self, tmp_path, capsys):
        config = write_config(tmp_path)
        summary = None
        for command in ("sample", "generate", "pretext", "export", "stats"):
            assert main([command, "--config", config]) == 0, command
            summary = json.loads(capsys.readouterr().out)
        assert summary["counts"]["verified"] >= 3
        assert summary["pass_rate"] == 1.0

    def test_backend_override(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["e2e", "--config", config, "--backend", "mock-lossy"]) == 0
        summary = json.loads(capsys.readouterr().out)
        # swap/noise probabilities default to 0, so lossy degenerates to faithful
        assert summary["generate"]["pass_rate"] == 1.0

    def test_seed_override_changes_outputs(self, tmp_path):
        config = write_config(tmp_path)
        assert main(["sample", "--config", config, "--seed", "1"]) == 0
        first = (tmp_path / "out" / "trajectories.jsonl").read_bytes()
        assert main(["sample", "--config", config, "--seed", "2"]) == 0
        second = (tmp_path / "out" / "trajectories.jsonl").read_bytes()
        assert first != second

    def test_verify_subcommand_reverifies_in_place(self, tmp_path, capsys):
        config = write_config(tmp_path)
        assert main(["sample", "--config", config]) == 0
        assert main(["generate", "--config", config]) == 0
        capsys.readouterr()
        assert main(["verify", "--config", config]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["pass_rate"] == 1.0  # faithful instructions stay verified

    def test_jobs_do_not_change_outputs(self, tmp_path):
        config = write_config(tmp_path)
        assert main(["e2e", "--config", config]) == 0
        serial = (tmp_path / "out" / "pairs.jsonl").read_bytes()
        assert main(["e2e", "--config", config, "--jobs", "4"]) == 0
        parallel = (tmp_path / "out" / "pairs.jsonl").read_bytes()
        assert serial == parallel

    def test_console_entry_point_subprocess(self, tmp_path):
        config = write_config(tmp_path)
        proc = subprocess.run(
            [sys.executable, "-m", "vlngen.cli", "sample", "--config", config],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode == 0, proc.stderr
        assert json.loads(proc.stdout)["trajectories"] >= 1
