"""Tests for the command line runner."""

import json

import pytest
import yaml

from app import cli
from app.core.run_config import load_run_config
from app.storage import local_fs


SMALL_RING = {
    "scenario": "vdpo",
    "seed": 0,
    "steps": 4,
    "params": {"M": 5, "fault_enabled": False},
    "design": {"N": 5},
}


def _write(tmp_path, payload, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(payload), encoding="utf-8")
    return path


class TestExitCodes:
    def test_unknown_key_is_config_error(self, tmp_path, outputs_dir, capsys):
        path = _write(tmp_path, {**SMALL_RING, "params": {"M": 5, "oscillators": 5}})

        assert cli.main(["simulate", "--config", str(path)]) == cli.EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_unknown_scenario(self, tmp_path, outputs_dir):
        path = _write(tmp_path, {"scenario": "grid"})

        assert cli.main(["design", "--config", str(path)]) == cli.EXIT_CONFIG

    def test_shrunk_state_set_is_infeasible(self, tmp_path, outputs_dir, capsys):
        # 측정 잡음 image 가 각도 제약보다 크다
        path = _write(tmp_path, {"scenario": "pns", "params": {"theta_max": 1e-4}})
        code = cli.main(["design", "--config", str(path), "--out", str(tmp_path / "run")])
        report = json.loads(capsys.readouterr().out)

        assert code == cli.EXIT_INFEASIBLE
        assert report["infeasible"] == [1, 2, 3, 4, 5]
        assert {s["step"] for s in report["subsystems"].values()} == {"III"}
        assert (tmp_path / "run" / "design" / "report.json").exists()

    def test_missing_trace_for_analyze(self, tmp_path, outputs_dir):
        path = _write(tmp_path, SMALL_RING)
        code = cli.main(["analyze", "--config", str(path), "--out", str(tmp_path / "empty")])

        assert code == cli.EXIT_CONFIG


class TestCommands:
    def test_zero_step_run(self, tmp_path, outputs_dir):
        cfg = load_run_config(_write(tmp_path, SMALL_RING), steps=0)
        code, report = cli.cmd_simulate(cfg, out=tmp_path / "run")

        assert code == cli.EXIT_OK
        assert report["summary"]["steps"] == 0
        assert local_fs.read_trace(tmp_path / "run" / local_fs.TRACE_FILE) == []
        assert local_fs.read_events(tmp_path / "run" / local_fs.EVENTS_FILE) == []

    def test_design_then_simulate_reuses_artifact(self, tmp_path, outputs_dir):
        cfg = load_run_config(_write(tmp_path, SMALL_RING))
        out = tmp_path / "run"

        code, report = cli.cmd_design(cfg, out=out)
        assert code == cli.EXIT_OK
        assert report["feasible"]
        assert all(all(s["certificate"].values()) for s in report["subsystems"].values())

        code, report = cli.cmd_simulate(cfg, out=out)
        assert code == cli.EXIT_OK
        assert report["reused_design"]
        rows = local_fs.read_trace(out / local_fs.TRACE_FILE)
        assert {r["step"] for r in rows} == {0, 1, 2, 3}
        summary = local_fs.read_json(out / local_fs.SUMMARY_FILE)
        assert summary["fingerprint"] == cfg.fingerprint()
        assert local_fs.load_history()[-1]["run_dir"] == str(out)

    def test_changed_design_inputs_force_redesign(self, tmp_path, outputs_dir):
        out = tmp_path / "run"
        cli.cmd_design(load_run_config(_write(tmp_path, SMALL_RING)), out=out)
        other = load_run_config(_write(tmp_path, {**SMALL_RING, "design": {"N": 6}}, name="other.yaml"), steps=1)

        code, report = cli.cmd_simulate(other, out=out)
        assert code == cli.EXIT_OK
        assert not report["reused_design"]

    def test_analyze_after_simulate(self, tmp_path, outputs_dir):
        cfg = load_run_config(_write(tmp_path, SMALL_RING))
        out = tmp_path / "run"
        cli.cmd_simulate(cfg, out=out)

        code, report = cli.cmd_analyze(cfg, out=out)
        assert code == cli.EXIT_OK
        assert report["detections"] == {}
        assert "detectability" not in report
        assert (out / local_fs.ANALYSIS_FILE).exists()

    @pytest.mark.parametrize("command", ["design", "simulate", "analyze"])
    def test_parser_accepts_common_flags(self, command):
        args = cli.build_parser().parse_args([command, "--config", "vdpo", "--seed", "2", "--retighten"])

        assert args.seed == 2 and args.retighten
        assert args.dwell_min is None
