"""Closed-loop scenario runs (slow)."""

import numpy as np
import pytest

from app.core.run_config import load_run_config
from app.pipeline.analyze import analyze_trace
from app.pipeline.design import TubeController
from app.pipeline.engine import design_bundle, simulate
from app.storage import local_fs
from modules.pns.config import PnsConfig
from modules.pns.pipeline import build_bundle as build_pns_bundle
from modules.vdpo.config import VdpoRingConfig
from modules.vdpo.pipeline import build_bundle as build_vdpo_bundle


pytestmark = pytest.mark.slow


def _preset(name, **params):
    cfg = load_run_config(name)
    merged = {**cfg.params, **params}
    if name == "vdpo":
        return VdpoRingConfig.from_dict(merged, cfg.design), build_vdpo_bundle
    return PnsConfig.from_dict(merged, cfg.design), build_pns_bundle


def _controllers(bundle):
    results = design_bundle(bundle)
    assert all(isinstance(r, TubeController) for r in results.values())
    return results


@pytest.fixture(scope="module")
def vdpo_run():
    params, build = _preset("vdpo")
    bundle = build(params, seed=0, steps=100)
    return simulate(bundle, _controllers(bundle))


@pytest.fixture(scope="module")
def pns_run():
    params, build = _preset("pns")
    bundle = build(params, seed=0, steps=100)
    return simulate(bundle, _controllers(bundle))


def _kinds(result, kind):
    return [e for e in result.events if e.kind == kind]


class TestOscillatorRing:
    def test_detection_timeline(self, vdpo_run):
        summary = vdpo_run.summary

        assert list(summary.detections) == [11]
        assert summary.detections[11] == 26

    def test_detection_fires_on_velocity(self, vdpo_run):
        events = _kinds(vdpo_run, "detection")

        assert [(e.step, e.target) for e in events] == [(26, 11)]
        assert events[0].reason.startswith("component 1:")

    def test_unplug_retunes_ring_neighbours(self, vdpo_run):
        unplug = _kinds(vdpo_run, "unplug")

        assert [(e.target, e.affected) for e in unplug] == [(11, [10, 12])]
        assert vdpo_run.summary.retuned == {11: [10, 12]}

    def test_replug_after_repair(self, vdpo_run):
        plug = _kinds(vdpo_run, "plug_in")

        assert [(e.step, e.target) for e in plug] == [(35, 11)]
        assert _kinds(vdpo_run, "plug_in_rejected") == []
        assert vdpo_run.summary.replugged == [11]

    def test_healthy_subsystems_respect_constraints(self, vdpo_run):
        assert vdpo_run.summary.healthy_constraint_violations == 0
        for row in vdpo_run.rows:
            if row.subsystem == 11 or row.owner != row.subsystem or not row.plugged:
                continue
            bound = 3.0 if row.owner_component == 0 else 2.0
            assert abs(row.state) <= bound + 1e-9
            if not np.isnan(row.input):
                assert abs(row.input) <= 8.0 + 1e-9

    def test_replugged_oscillator_regulates(self, vdpo_run):
        tail = [
            r.state
            for r in vdpo_run.rows
            if r.subsystem == 11 and r.owner == 11 and r.owner_component == 0 and r.step >= 85
        ]

        assert tail
        assert max(abs(x) for x in tail) <= 0.3


class TestPowerNetwork:
    def test_detection_and_retune(self, pns_run):
        summary = pns_run.summary

        assert list(summary.detections) == [4]
        assert 60 <= summary.detections[4] <= 64
        assert summary.retuned == {4: [3, 5]}

    def test_remote_areas_untouched(self, pns_run):
        for event in pns_run.events:
            if event.kind in ("unplug", "retune"):
                assert not {1, 2} & set(event.affected)

    def test_no_alarm_after_unplug(self, pns_run):
        assert [e.target for e in _kinds(pns_run, "detection")] == [4]

    def test_analyzer_agrees_with_simulation(self, pns_run):
        rows = [r.to_dict() for r in pns_run.rows]
        report = analyze_trace(rows, lam=0.5, fault_target=4, fault_onset=60)

        assert report["detections"] == {4: pns_run.summary.detections[4]}
        assert report["envelope"]["holds"]


@pytest.fixture(scope="module")
def healthy_ring():
    params, build = _preset("vdpo", fault_enabled=False)
    return params, build, _controllers(build(params, seed=0, steps=100))


@pytest.fixture(scope="module")
def healthy_power_network():
    params, build = _preset("pns", fault_enabled=False)
    return params, build, _controllers(build(params, seed=0, steps=100))


@pytest.fixture(scope="module")
def faulty_ring():
    params, build = _preset("vdpo")
    return params, build, _controllers(build(params, seed=0, steps=100))


class TestHealthyRuns:
    @pytest.mark.parametrize("seed", range(100))
    def test_ring_has_no_false_alarm(self, healthy_ring, seed):
        params, build, controllers = healthy_ring
        summary = simulate(build(params, seed=seed, steps=100), controllers).summary

        assert summary.detections == {}
        assert summary.mpc_infeasible == 0
        assert summary.tube_violations == 0
        assert summary.constraint_violations == 0

    @pytest.mark.parametrize("seed", range(100))
    def test_power_network_has_no_false_alarm(self, healthy_power_network, seed):
        params, build, controllers = healthy_power_network
        result = simulate(build(params, seed=seed, steps=100), controllers)

        assert result.summary.detections == {}
        assert result.summary.mpc_infeasible == 0
        assert analyze_trace([r.to_dict() for r in result.rows], lam=0.5)["envelope"]["holds"]


class TestTubeInvariance:
    @pytest.mark.parametrize("seed", range(50))
    def test_ring_states_stay_in_tube(self, faulty_ring, seed):
        params, build, controllers = faulty_ring
        summary = simulate(build(params, seed=seed, steps=100), controllers).summary

        assert summary.tube_violations == 0
        assert summary.healthy_constraint_violations == 0


class TestDeterminism:
    def test_identical_trace_bytes(self, tmp_path):
        bundle = build_vdpo_bundle(VdpoRingConfig(M=4, fault_enabled=False), seed=9, steps=20)
        controllers = _controllers(bundle)
        paths = []
        for name in ("a.csv", "b.csv"):
            fresh = build_vdpo_bundle(VdpoRingConfig(M=4, fault_enabled=False), seed=9, steps=20)
            paths.append(local_fs.write_trace(tmp_path / name, simulate(fresh, controllers).rows))

        assert paths[0].read_bytes() == paths[1].read_bytes()
