"""Tests for the synchronous closed-loop engine."""

import numpy as np
import pytest

from app.core.errors import ConfigError
from app.pipeline.analyze import recorded_detections
from app.pipeline.engine import ClosedLoopEngine, EngineOptions, SetpointChange, design_bundle, simulate
from app.pipeline.network import FaultSpec
from app.services.qp_service import QpOptions
from modules.vdpo.config import VdpoRingConfig
from modules.vdpo.pipeline import build_bundle


RING = VdpoRingConfig(M=5, fault_enabled=False)


@pytest.fixture(scope="module")
def controllers():
    return design_bundle(build_bundle(RING, seed=0))


def _stuck_actuator(target=3, onset=2):
    return FaultSpec(
        target=target,
        onset=onset,
        fault_map=lambda x, psi, u, t: np.array([8.0]),
        mode="actuator_override",
    )


class TestSetup:
    def test_missing_controller(self, controllers):
        partial = {i: c for i, c in controllers.items() if i != 4}

        with pytest.raises(ConfigError):
            ClosedLoopEngine(build_bundle(RING), partial)

    def test_unknown_backend(self, controllers):
        with pytest.raises(NotImplementedError):
            ClosedLoopEngine(build_bundle(RING), controllers, config=EngineOptions(backend="threads"))

    def test_negative_steps(self, controllers):
        with pytest.raises(ConfigError):
            simulate(build_bundle(RING), controllers, steps=-1)


class TestTrace:
    def test_one_row_per_component_and_step(self, controllers):
        bundle = build_bundle(RING, seed=1)
        result = simulate(bundle, controllers, steps=3)
        per_step = sum(bundle.network.diag(i).n_tilde for i in bundle.network.ids)

        assert len(result.rows) == 3 * per_step
        assert result.summary.steps == 3
        assert all(r.time == pytest.approx(r.step * 0.1) for r in result.rows)
        assert {r.mpc_status for r in result.rows if r.owner == r.subsystem} == {"optimal"}

    def test_setpoint_shift(self, controllers):
        bundle = build_bundle(RING, seed=1)
        bundle.setpoints = [SetpointChange(time=2, subsystem=1, x_s=np.array([0.2, 0.0]), u_s=np.zeros(1))]
        engine = ClosedLoopEngine(bundle, controllers)
        engine.run(1)

        assert np.allclose(engine.pool[1].problem.x_s, 0.0)
        engine.step(1)
        engine.step(2)
        np.testing.assert_allclose(engine.pool[1].problem.x_s, [0.2, 0.0])


class TestFaultHandling:
    def test_stuck_actuator_is_isolated(self, controllers):
        bundle = build_bundle(RING, seed=2, steps=12)
        bundle.faults = [_stuck_actuator()]
        result = simulate(bundle, controllers)

        assert list(result.summary.detections) == [3]
        assert 3 <= result.summary.detections[3] <= 6
        assert result.summary.retuned == {3: [2, 4]}
        assert [e.kind for e in result.events][:3] == ["detection", "unplug", "retune"]

    def test_trace_shows_detection_step(self, controllers):
        bundle = build_bundle(RING, seed=2, steps=12)
        bundle.faults = [_stuck_actuator()]
        result = simulate(bundle, controllers)

        assert recorded_detections([r.to_dict() for r in result.rows]) == result.summary.detections
        t = result.summary.detections[3]
        assert all(r.plugged == 0 for r in result.rows if r.subsystem == 3 and r.step > t)

    def test_detection_without_reconfiguration(self, controllers):
        bundle = build_bundle(RING, seed=2, steps=12)
        bundle.faults = [_stuck_actuator()]
        result = simulate(bundle, controllers, config=EngineOptions(auto_reconfigure=False))

        assert 3 in result.summary.detections
        assert result.summary.unplugged == []
        assert not [e for e in result.events if e.kind == "unplug"]

    def test_fault_effect_recorded_after_onset(self, controllers):
        bundle = build_bundle(RING, seed=2, steps=4)
        bundle.faults = [_stuck_actuator(onset=2)]
        result = simulate(bundle, controllers, config=EngineOptions(auto_reconfigure=False))
        effects = {r.step: r.fault_effect for r in result.rows if r.subsystem == 3 and r.owner_component == 1}

        assert effects[0] == 0.0 and effects[1] == 0.0
        assert effects[2] != 0.0


class TestSolverLimits:
    def test_iteration_cap_falls_back_without_infeasibility(self, controllers):
        bundle = build_bundle(RING, seed=1)
        result = simulate(bundle, controllers, steps=3, config=EngineOptions(qp=QpOptions(max_iter=1)))
        capped = [e for e in result.events if e.kind == "qp_iteration_limit"]

        assert result.summary.solver_limits == len(capped) > 0
        assert result.summary.mpc_infeasible == 0
        assert not [e for e in result.events if e.kind == "mpc_infeasible"]
