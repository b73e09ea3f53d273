"""Tests for the five-area power network scenario."""

import numpy as np
import pytest
from scipy.linalg import expm

from app.core.errors import ConfigError
from app.pipeline.design import TubeController
from app.pipeline.engine import design_bundle
from modules.pns.config import PnsConfig
from modules.pns.pipeline import (
    area_continuous,
    area_discrete,
    build_bundle,
    build_pns,
    discretize,
    inertia_fault,
    load_level,
    neighbors,
    setpoint_schedule,
)


class TestAreaModel:
    def test_neighbours_from_tie_lines(self):
        cfg = PnsConfig()

        assert neighbors(cfg, 2) == [1, 3, 5]
        assert neighbors(cfg, 4) == [3, 5]

    def test_continuous_rows(self):
        cfg = PnsConfig()
        area = area_continuous(cfg, 2)

        # P_21 + P_23 + P_25 = 6, 2H = 16
        assert area.A[1, 0] == pytest.approx(-6.0 / 16.0)
        assert area.A[3, 1] == pytest.approx(-1.0 / (0.05 * 0.2))
        np.testing.assert_allclose(area.couplings[5], [0.0, 2.0 / 16.0, 0.0, 0.0])

    def test_zoh_matches_matrix_exponential(self):
        cfg = PnsConfig()
        cont = area_continuous(cfg, 3)
        disc = discretize(cont, cfg.Ts)
        Ad = expm(cont.A * cfg.Ts)

        np.testing.assert_allclose(disc.A, Ad, atol=1e-10)
        # Γ = A⁻¹(e^{ATs} − I) (A 가역)
        gamma = lambda col: np.linalg.solve(cont.A, (Ad - np.eye(4)) @ col)
        np.testing.assert_allclose(disc.B[:, 0], gamma(cont.B[:, 0]), atol=1e-10)
        np.testing.assert_allclose(disc.L, gamma(cont.L), atol=1e-10)
        for j in cont.couplings:
            np.testing.assert_allclose(disc.couplings[j], gamma(cont.couplings[j]), atol=1e-10)

    def test_load_equilibrium(self):
        cfg = PnsConfig()
        net = build_pns(cfg)
        model = net.model(1)
        level = load_level(cfg, 1, 5)
        x_s = np.array([0.0, 0.0, level, level])

        successor = model.discrete_successor(x_s, np.zeros(model.p), np.array([level]), 5)
        np.testing.assert_allclose(successor, x_s, atol=1e-12)


class TestLoadSchedule:
    def test_cumulative_levels(self):
        cfg = PnsConfig()

        assert load_level(cfg, 1, 4) == 0.0
        assert load_level(cfg, 1, 5) == pytest.approx(0.10)
        assert load_level(cfg, 1, 25) == pytest.approx(-0.12)
        assert load_level(cfg, 2, 20) == pytest.approx(-0.04)

    def test_setpoints_follow_load_table(self):
        changes = setpoint_schedule(PnsConfig())
        first = changes[0]

        assert (first.time, first.subsystem) == (5, 1)
        np.testing.assert_allclose(first.x_s, [0.0, 0.0, 0.10, 0.10])
        np.testing.assert_allclose(first.u_s, [0.10])
        assert [c.time for c in changes] == sorted(c.time for c in changes)
        assert {(c.time, c.subsystem) for c in changes if c.time == 20} == {(20, 1), (20, 2), (20, 3)}


class TestDiagnosisModel:
    def test_monitored_angles(self):
        net = build_pns(PnsConfig())

        assert net.diag(2).n_tilde == 7
        assert net.diag(2).psi_tilde_layout == ()
        assert net.diag(4).n_tilde == 4
        assert [j for j, _ in net.diag(4).psi_tilde_layout] == [3, 5]
        assert net.diag(1).x_layout[0].shared_id == 1

    def test_measured_feedback(self):
        net = build_pns(PnsConfig())

        assert all(net.model(i).feedback == "measured" for i in net.ids)

    def test_non_neighbour_angle_rejected(self):
        with pytest.raises(ConfigError):
            PnsConfig.from_dict({"fd_shared_angles": {1: [4]}})


class TestInertiaFault:
    def test_effect_is_model_difference(self):
        cfg = PnsConfig()
        fault = inertia_fault(cfg)
        nominal = area_discrete(cfg, 4)
        faulty = area_discrete(cfg, 4, H=cfg.fault_H)
        x = np.array([0.01, -0.02, 0.05, 0.04])
        psi = np.array([0.02, -0.01])
        u = np.array([0.1])
        t = 70

        def successor(m):
            return m.A @ x + m.B @ u + m.couplings[3] * psi[0] + m.couplings[5] * psi[1] + m.L * load_level(cfg, 4, t)

        np.testing.assert_allclose(fault.evaluate(x, psi, u, t), successor(faulty) - successor(nominal), atol=1e-12)
        assert (fault.target, fault.onset, fault.mode) == (4, 60, "additive_state")
        np.testing.assert_allclose(fault.evaluate(x, psi, u, 59), 0.0)


class TestConfig:
    @pytest.mark.parametrize(
        "params",
        [
            {"H": [8.0, 8.0, 8.0, 8.0]},
            {"tie_lines": [[1, 1, 2.0]]},
            {"tie_lines": [[1, 2, -1.0]]},
            {"load_table": [[0, 9, 0.1]]},
            {"lam": 0.0},
            {"frequency": 50},
        ],
    )
    def test_invalid(self, params):
        with pytest.raises(ConfigError):
            PnsConfig.from_dict(params)

    def test_bundle(self):
        bundle = build_bundle(PnsConfig(), seed=2, steps=80)

        assert bundle.name == "pns"
        assert bundle.lam == 0.5
        assert len(bundle.faults) == 1
        assert all(np.array_equal(x, np.zeros(4)) for x in bundle.initial_states.values())

    def test_every_area_gets_a_tube_controller(self):
        results = design_bundle(build_bundle(PnsConfig(), seed=0, steps=10))

        assert sorted(results) == [1, 2, 3, 4, 5]
        assert all(isinstance(r, TubeController) for r in results.values())
