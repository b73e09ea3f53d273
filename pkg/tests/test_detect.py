"""Tests for the distributed fault detection units and the consensus round."""

import numpy as np
import pytest

from app.core.errors import CommunicationFault, ConfigError
from app.pipeline.detect import (
    THRESHOLD_PARTS,
    ConsensusMessage,
    consensus_weights,
    detect,
    estimate_uncertainty_bounds,
    estimator_step,
    exchange_round,
    local_terms,
    make_unit,
    restart_unit,
    set_parent_active,
    sync_retired,
    threshold_step,
)
from app.pipeline.network import FaultSpec, assemble_z, measure, step_plant
from app.services.noise_service import NoiseSource
from conftest import scalar_subsystem
from modules.pns.config import PnsConfig
from modules.pns.pipeline import build_pns
from modules.vdpo.config import VdpoRingConfig
from modules.vdpo.pipeline import build_subsystem


def _message(sender, score, k=4):
    return ConsensusMessage(
        sender=sender,
        k=k,
        estimate=0.0,
        prediction=0.0,
        threshold_term=score,
        selection_score=score,
        parts=(0.0,) * len(THRESHOLD_PARTS),
    )


def _units(net, y, lam=0.5):
    return {i: make_unit(net.diag(i), lam=lam, y0=y[i]) for i in net.ids}


def _run_chain(net, *, steps, faults=(), seed=0, lam=0.5):
    """
    측정 → 판정 → round → 플랜트 순서로 돌리고 (t, 서브시스템) 검출 목록을 돌려준다
    """
    source = NoiseSource(seed=seed)
    states = {i: np.zeros(1) for i in net.ids}
    units = None
    detections = []
    for t in range(steps):
        y = measure(net, states, source, t)
        if units is None:
            units = _units(net, y, lam=lam)
        for i, unit in units.items():
            if not unit.halted and detect(unit, y[i], t=t).detected:
                unit.halted = True
                detections.append((t, i))
        inputs = {i: np.array([0.3 * np.sin(0.2 * t + i)]) for i in net.ids}
        exchange_round(net, units, y, inputs, t)
        states = step_plant(net, states, inputs, list(faults), t)
    return detections, units


class TestUnit:
    def test_initial_state(self):
        _, diag = scalar_subsystem(1, ())
        unit = make_unit(diag, lam=0.5, y0=np.array([0.2]))

        np.testing.assert_allclose(unit.xhat, [0.2])
        np.testing.assert_allclose(unit.eps_bar, [0.01])
        assert unit.dg_bar == 0.0 and unit.dh_bar == 0.0

    @pytest.mark.parametrize("lam", [0.0, 1.0, -0.1])
    def test_lambda_range(self, lam):
        _, diag = scalar_subsystem(1, ())
        with pytest.raises(ConfigError):
            make_unit(diag, lam=lam, y0=np.zeros(1))

    def test_unit_gain_has_no_uncertainty(self):
        _, diag = scalar_subsystem(2, (1, 3))

        assert estimate_uncertainty_bounds(diag, n_samples=20) == (0.0, 0.0)

    def test_vdpo_gain_uncertainty_is_positive(self):
        _, diag = build_subsystem(VdpoRingConfig(M=3), 2)
        dg, dh = estimate_uncertainty_bounds(diag, theta_bar=np.full(2, 0.1), n_samples=50)

        assert dg > 0.0 and dh > 0.0


class TestThreshold:
    def test_scalar_fixed_point(self):
        _, diag = scalar_subsystem(1, ())
        unit = make_unit(diag, lam=0.5, y0=np.zeros(1))
        for _ in range(200):
            unit.eps_bar = threshold_step(unit, np.zeros(1), np.zeros(0), [], {}, y=np.zeros(1))

        # (|a| + 2λ + 1) ρ̄ / (1 − λ)
        assert unit.eps_bar[0] == pytest.approx((0.5 + 1.0 + 1.0) * 0.01 / 0.5, rel=1e-9)

    def test_parts_add_up(self):
        _, diag = scalar_subsystem(2, (1, 3))
        unit = make_unit(diag, lam=0.5, y0=np.zeros(1))
        terms = local_terms(unit, np.array([0.1]), np.array([0.4]), np.array([0.3, -0.2]))

        total = unit.lam * unit.eps_bar + sum(terms.parts.values())
        np.testing.assert_allclose(terms.term, total)
        np.testing.assert_allclose(terms.parts["coupling"], [0.1 * (0.31 + 0.21)])
        np.testing.assert_allclose(terms.prediction, [0.5 * 0.1 + 0.4])

    def test_inactive_parent_leaves_coupling_bound(self):
        _, diag = scalar_subsystem(2, (1, 3))
        unit = make_unit(diag, lam=0.5, y0=np.zeros(1))

        assert set_parent_active(unit, 1, False)
        assert not set_parent_active(unit, 1, False)
        terms = local_terms(unit, np.zeros(1), np.zeros(1), np.array([0.3, -0.2]))
        np.testing.assert_allclose(terms.parts["coupling"], [0.1 * 0.21])


class TestConsensus:
    def test_minimum_score_wins(self):
        row = consensus_weights(4, [_message(5, 0.3), _message(3, 0.2), _message(4, 0.25)])

        assert row.pick == 3
        assert sum(row.weights.values()) == 1.0
        assert sorted(row.weights.values()) == [0.0, 0.0, 1.0]

    def test_tie_goes_to_smaller_id(self):
        row = consensus_weights(4, [_message(5, 0.1), _message(3, 0.1)])

        assert row.pick == 3

    def test_empty_candidates(self):
        with pytest.raises(ValueError):
            consensus_weights(4, [])

    @pytest.mark.parametrize("seed", range(10))
    def test_weight_matrix_products_stay_row_stochastic(self, seed):
        rng = np.random.default_rng(seed)
        members = [2, 3, 5, 7]
        product = np.eye(len(members))
        for _ in range(25):
            step = np.zeros_like(product)
            for r in range(len(members)):
                subset = rng.choice(members, size=int(rng.integers(1, len(members) + 1)), replace=False)
                # 한 자리로 반올림해서 동률도 섞는다
                row = consensus_weights(4, [_message(int(j), round(float(rng.random()), 1)) for j in subset])
                for j, w in row.weights.items():
                    step[r, members.index(j)] = w
            np.testing.assert_array_equal(step.sum(axis=1), 1.0)
            product = step @ product

        np.testing.assert_array_equal(product.sum(axis=1), 1.0)
        assert set(np.unique(product)) <= {0.0, 1.0}

    def test_missing_message_is_communication_fault(self):
        net = build_pns(PnsConfig())
        y = {i: np.zeros(net.diag(i).n_tilde) for i in net.ids}
        unit = make_unit(net.diag(4), lam=0.5, y0=y[4])
        z, _ = assemble_z(net, 4, y)

        with pytest.raises(CommunicationFault):
            estimator_step(unit, y[4], np.zeros(1), z, [], {})

    def test_shared_members_agree_on_threshold(self):
        net = build_pns(PnsConfig())
        y = measure(net, {i: np.zeros(4) for i in net.ids}, NoiseSource(seed=4), 0)
        units = _units(net, y)
        exchange_round(net, units, y, {i: np.zeros(1) for i in net.ids}, 0)

        owners = {3: 4, 4: 0, 5: 4}  # 서브시스템 → Δθ_4 의 local index
        eps = {i: units[i].eps_bar[idx] for i, idx in owners.items()}
        picks = {i: units[i].picks[idx] for i, idx in owners.items()}
        assert len(set(picks.values())) == 1
        assert picks[4] in (3, 4, 5)
        assert max(eps.values()) == pytest.approx(min(eps.values()), rel=1e-12)


class TestRound:
    def test_healthy_chain_has_no_alarm(self, chain_network):
        detections, units = _run_chain(chain_network(), steps=120, seed=7)

        assert detections == []
        assert all(not u.halted for u in units.values())

    def test_additive_fault_is_detected_next_step(self, chain_network):
        fault = FaultSpec(target=2, onset=10, fault_map=lambda x, psi, u, t: np.array([3.0]))
        detections, units = _run_chain(chain_network(), steps=20, faults=[fault], seed=7)

        assert detections[0] == (11, 2)
        assert units[2].halted

    def test_halted_unit_is_skipped(self, chain_network):
        net = chain_network()
        y = measure(net, {i: np.zeros(1) for i in net.ids}, NoiseSource(seed=1), 0)
        units = _units(net, y)
        units[2].halted = True
        frozen = units[2].xhat.copy()
        updates = exchange_round(net, units, y, {i: np.zeros(1) for i in net.ids}, 0)

        assert sorted(updates) == [1, 3]
        np.testing.assert_array_equal(units[2].xhat, frozen)

    def test_retired_shared_component_is_frozen(self):
        net = build_pns(PnsConfig())
        states = {i: np.full(4, 0.01) for i in net.ids}
        y = measure(net, states, NoiseSource(seed=2), 0)
        units = _units(net, y)
        net.deactivate(4)
        y = measure(net, states, NoiseSource(seed=2), 1)
        updates = exchange_round(net, units, y, {i: np.zeros(1) for i in net.ids if i != 4}, 1)

        assert 4 not in updates
        assert units[3].retired[4]
        assert units[3].eps_bar[4] == 0.0 and units[3].xhat[4] == 0.0
        assert units[3].picks[4] == -1

    def test_retired_component_excluded_from_detection(self):
        _, diag = scalar_subsystem(1, ())
        unit = make_unit(diag, lam=0.5, y0=np.zeros(1))
        sync_retired(unit, np.array([True]), np.zeros(1))

        assert not detect(unit, np.array([3.0]), t=0).detected


class TestRestart:
    def test_revived_component_restarts_from_measurement(self):
        _, diag = scalar_subsystem(1, ())
        unit = make_unit(diag, lam=0.5, y0=np.zeros(1))
        sync_retired(unit, np.array([True]), np.zeros(1))
        sync_retired(unit, np.array([False]), np.array([0.7]))

        np.testing.assert_allclose(unit.xhat, [0.7])
        np.testing.assert_allclose(unit.eps_bar, [0.01])

    def test_restart_clears_halt(self):
        _, diag = scalar_subsystem(2, (1, 3))
        unit = make_unit(diag, lam=0.5, y0=np.zeros(1))
        unit.halted = True
        set_parent_active(unit, 3, False)
        restart_unit(unit, np.array([0.4]))

        assert not unit.halted
        assert unit.z_active.tolist() == [True, True]
        np.testing.assert_allclose(unit.xhat, [0.4])
        np.testing.assert_allclose(unit.eps_bar, [0.01])
