# pnpdm/modules/vdpo/pipeline.py
"""
vdPO Ring Pipeline

역할:
- M개 van der Pol 진동자 ring → Network (Euler 이산화)
- 설계 옵션 / 고장 / 수리 일정 / 초기 상태를 묶은 ScenarioBundle

모델 (서브시스템 i, parent = i−1, i+1 mod M):
    x1⁺ = x1 + Ts x2
    x2⁺ = x2 + Ts[−(1 + 2β̄)x1 + β̄(x_{i−1,1} + x_{i+1,1}) + g(x)u − ᾱ(x1² − 1)x2]
    g(x) = 1 / (0.4 + 0.1 x1²)

주의:
- 진단 분해는 제어 분해와 같다 (공유 변수 없음).
- plant="continuous" 이면 같은 식의 연속시간 모델을 RK4(substeps)로 적분, 입력과 ψ는 ZOH
"""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

from app.pipeline.design import DesignOptions, MatchedBounds
from app.pipeline.engine import ScenarioBundle
from app.pipeline.network import (
    DiagSubsystemModel,
    FaultSpec,
    LayoutEntry,
    Network,
    SubsystemModel,
    Successor,
    register_map,
    resolve_map,
)
from app.pipeline.reconfig import RepairEntry
from app.services.noise_service import initial_state
from app.services.polytope_service import Interval, box
from modules.vdpo.config import VdpoRingConfig


# -----------------------------
# Named Maps
# -----------------------------
@register_map("vdpo_gain")
def _vdpo_gain():
    return lambda x, psi: 1.0 / (0.4 + 0.1 * float(x[0]) ** 2)


@register_map("vdpo_drift")
def _vdpo_drift(alpha_bar: float):
    return lambda x, psi: np.array([alpha_bar * (float(x[0]) ** 2 - 1.0) * float(x[1])])


# -----------------------------
# Helpers
# -----------------------------
def ring_neighbors(i: int, M: int) -> Tuple[int, int]:
    """
    1-based ring 이웃 (왼쪽, 오른쪽)
    """
    left = M if i == 1 else i - 1
    right = 1 if i == M else i + 1
    return left, right


def continuous_successor(cfg: VdpoRingConfig) -> Successor:
    """
    연속시간 vdPO 를 Ts 동안 RK4 로 적분하는 플랜트
    """
    gain = resolve_map("vdpo_gain")
    drift = resolve_map("vdpo_drift", alpha_bar=cfg.alpha_bar)
    dt = cfg.Ts / cfg.substeps

    def f(x: np.ndarray, psi: np.ndarray, u: np.ndarray) -> np.ndarray:
        dx2 = (
            -(1.0 + 2.0 * cfg.beta_bar) * x[0]
            + cfg.beta_bar * float(np.sum(psi))
            + gain(x, psi) * float(u[0])
            - float(drift(x, psi)[0])
        )
        return np.array([x[1], dx2])

    def successor(x: np.ndarray, psi: np.ndarray, u: np.ndarray, t: int) -> np.ndarray:
        state = np.asarray(x, dtype=float).copy()
        u = np.atleast_1d(np.asarray(u, dtype=float))
        for _ in range(cfg.substeps):
            k1 = f(state, psi, u)
            k2 = f(state + 0.5 * dt * k1, psi, u)
            k3 = f(state + 0.5 * dt * k2, psi, u)
            k4 = f(state + dt * k3, psi, u)
            state = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return state

    return successor


def build_subsystem(cfg: VdpoRingConfig, i: int) -> Tuple[SubsystemModel, DiagSubsystemModel]:
    Ts, beta = cfg.Ts, cfg.beta_bar
    left, right = ring_neighbors(i, cfg.M)
    psi_layout = tuple((j, 0) for j in (left, right))

    A = np.array([[1.0, Ts], [-Ts * (1.0 + 2.0 * beta), 1.0]])
    B = np.array([[0.0], [Ts]])
    w_matrix = np.array([[0.0, 0.0], [Ts * beta, Ts * beta]])
    X = box(np.zeros(2), [cfg.x1_max, cfg.x2_max])
    U = box(np.zeros(1), cfg.u_max)
    O = box(np.zeros(2), cfg.rho_bound)

    map_names = {"g": "vdpo_gain", "h": "vdpo_drift", "w": "linear_coupling"}
    gain = resolve_map("vdpo_gain")
    drift = resolve_map("vdpo_drift", alpha_bar=cfg.alpha_bar)
    coupling = resolve_map("linear_coupling", matrix=w_matrix)

    model = SubsystemModel(
        id=i,
        A=A,
        B=B,
        g=gain,
        h=drift,
        w=coupling,
        X=X,
        U=U,
        O=O,
        parents=tuple(sorted((left, right))),
        psi_layout=psi_layout,
        w_matrix=w_matrix,
        successor=continuous_successor(cfg) if cfg.plant == "continuous" else None,
        feedback="state",
        map_names=map_names,
        state_names=("x1", "x2"),
    )

    rho = np.full(2, cfg.rho_bound)
    diag = DiagSubsystemModel(
        id=i,
        A_tilde=A,
        B_tilde=B,
        g_tilde=gain,
        h_tilde=drift,
        x_layout=(LayoutEntry(i, 0), LayoutEntry(i, 1)),
        psi_tilde_layout=psi_layout,
        X_tilde=X,
        w_bar=resolve_map("linear_interval_bound", matrix=w_matrix, theta_bar=[cfg.rho_bound] * 2),
        rho_bar=rho,
        w_tilde=coupling,
        psi_tilde_box=box(np.zeros(2), cfg.x1_max),
    )
    return model, diag


def matched_bounds(cfg: VdpoRingConfig) -> MatchedBounds:
    """
    closed-form 정합 범위: g⁻¹ = 0.4 + 0.1x1² ∈ [0.4, 0.4 + 0.1x̄1²], |h| <= ᾱ max|x1² − 1| x̄2
    """
    g_inv = Interval(0.4, 0.4 + 0.1 * cfg.x1_max**2)
    h_mag = abs(cfg.alpha_bar) * max(abs(cfg.x1_max**2 - 1.0), 1.0) * cfg.x2_max
    return MatchedBounds(G=g_inv, H=box(np.zeros(1), h_mag), source="closed_form")


def design_options(cfg: VdpoRingConfig, *, seed: int) -> DesignOptions:
    d = cfg.design
    return DesignOptions(
        Q=np.diag(d.Q),
        R=np.array([[d.R]]),
        N=d.N,
        omega=d.omega,
        Qf_gain=np.diag(d.Qf),
        Rf_gain=np.array([[d.Rf]]),
        coupling_method="interval",
        n_samples=d.n_samples,
        seed=seed,
        matched_bounds=matched_bounds(cfg),
    )


# -----------------------------
# Public API
# -----------------------------
def build_vdpo(cfg: VdpoRingConfig) -> Network:
    cfg.validate()
    subsystems = {i: build_subsystem(cfg, i) for i in range(1, cfg.M + 1)}
    return Network(subsystems=subsystems, name="vdpo")


def build_bundle(cfg: VdpoRingConfig, *, seed: int = 0, steps: int = 100) -> ScenarioBundle:
    """
    네트워크 + 설계 옵션 + 고장 / 수리 일정 + 초기 상태
    """
    net = build_vdpo(cfg)
    cfg.validate_fault_script()
    hw = np.full(2, cfg.init_half_width)
    initial: Dict[int, np.ndarray] = {
        i: initial_state(seed=seed, subsystem=i, lo=-hw, hi=hw) for i in net.ids
    }

    faults = []
    repairs = []
    if cfg.fault_enabled:
        value = float(cfg.fault_value)
        faults.append(
            FaultSpec(
                target=cfg.fault_target,
                onset=cfg.fault_onset,
                fault_map=lambda x, psi, u, t: np.array([value]),
                mode="actuator_override",
                clear_at=cfg.repair_at,
                name=f"u{cfg.fault_target} stuck at {value}",
            )
        )
        if cfg.repair_at is not None:
            repairs.append(
                RepairEntry(target=cfg.fault_target, time=cfg.repair_at, init_state=np.asarray(cfg.replug_state, dtype=float))
            )

    options = design_options(cfg, seed=seed)
    return ScenarioBundle(
        name="vdpo",
        network=net,
        initial_states=initial,
        design_options={i: options for i in net.ids},
        faults=faults,
        repair_schedule=repairs,
        lam=cfg.lam,
        seed=seed,
        steps=steps,
        sample_time=cfg.Ts,
        unit_samples=cfg.design.n_samples,
    )
