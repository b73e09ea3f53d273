"""Tests for run artifact storage."""

import math

import numpy as np
import pytest

from app.core.metadata import EventRecord, TraceRecord
from app.pipeline.design import design_controller
from app.services.polytope_service import box
from app.storage import local_fs
from conftest import scalar_subsystem


def _record(step, *, residual=0.01, status="optimal"):
    return TraceRecord(
        time=step * 0.1,
        step=step,
        subsystem=2,
        component=0,
        owner=2,
        owner_component=0,
        state=0.1 / 3.0,
        measured=0.04,
        estimate=0.03,
        residual=residual,
        threshold=0.05,
        consensus_pick=2,
        nominal=float("nan") if status == "-" else 0.0,
        input=0.25,
        aux=-0.125,
        mpc_status=status,
        plugged=1,
        fault_effect=0.0,
    )


class TestRunDir:
    def test_default_location(self, outputs_dir):
        path = local_fs.run_dir(scenario="vdpo", seed=3)

        assert path == (outputs_dir / "runs" / "vdpo_seed3").resolve()
        assert path.is_dir()

    def test_explicit_directory(self, outputs_dir, tmp_path):
        path = local_fs.run_dir(scenario="pns", seed=0, out=tmp_path / "custom")

        assert path == tmp_path / "custom"
        assert path.is_dir()


class TestTrace:
    def test_types_restored(self, tmp_path):
        path = local_fs.write_trace(tmp_path / "trace.csv", [_record(0), _record(1, status="-")])
        rows = local_fs.read_trace(path)

        assert rows[0]["step"] == 0 and isinstance(rows[0]["step"], int)
        assert rows[0]["state"] == 0.1 / 3.0
        assert rows[0]["mpc_status"] == "optimal"
        assert math.isnan(rows[1]["nominal"])
        assert list(rows[0]) == TraceRecord.columns()

    def test_same_rows_same_bytes(self, tmp_path):
        rows = [_record(t) for t in range(5)]
        a = local_fs.write_trace(tmp_path / "a.csv", rows)
        b = local_fs.write_trace(tmp_path / "b.csv", rows)

        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes().count(b"\r\n") == 6

    def test_unknown_column(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("step,colour\r\n0,red\r\n", encoding="utf-8")

        with pytest.raises(ValueError):
            local_fs.read_trace(path)


class TestEvents:
    def test_json_lines(self, tmp_path):
        events = [
            EventRecord(time=2.6, step=26, kind="detection", target=11, reason="component 0"),
            EventRecord(time=2.6, step=26, kind="unplug", target=11, affected=[10, 12]),
        ]
        path = local_fs.write_events(tmp_path / "events.jsonl", events)
        loaded = local_fs.read_events(path)

        assert [e["kind"] for e in loaded] == ["detection", "unplug"]
        assert loaded[1]["affected"] == [10, 12]

    def test_missing_file_is_empty(self, tmp_path):
        assert local_fs.read_events(tmp_path / "none.jsonl") == []


class TestControllers:
    @pytest.fixture
    def controller(self):
        model, _ = scalar_subsystem(2, (1, 3))
        return design_controller(model, {j: box(np.zeros(1), 5.0) for j in model.parents})

    def test_round_trip_with_matching_fingerprint(self, tmp_path, controller):
        local_fs.save_controllers(tmp_path, controllers={2: controller}, fingerprint="abc")
        loaded = local_fs.load_controllers(tmp_path, fingerprint="abc")

        assert list(loaded) == [2]
        np.testing.assert_array_equal(loaded[2].K, controller.K)
        np.testing.assert_array_equal(loaded[2].Z.offsets, controller.Z.offsets)
        assert loaded[2].terminal_level == controller.terminal_level

    def test_stale_fingerprint(self, tmp_path, controller):
        local_fs.save_controllers(tmp_path, controllers={2: controller}, fingerprint="abc")

        assert local_fs.load_controllers(tmp_path, fingerprint="def") is None
        assert local_fs.load_controllers(tmp_path / "empty", fingerprint="abc") is None


class TestHistory:
    def test_append_adds_timestamp(self, outputs_dir):
        assert local_fs.load_history() == []
        local_fs.append_history(record={"scenario": "vdpo", "seed": 0})
        local_fs.append_history(record={"scenario": "pns", "seed": 1})
        history = local_fs.load_history()

        assert [h["scenario"] for h in history] == ["vdpo", "pns"]
        assert all("created_at" in h for h in history)
        assert (outputs_dir / "history.json").exists()
