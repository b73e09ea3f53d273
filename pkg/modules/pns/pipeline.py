# pnpdm/modules/pns/pipeline.py
"""
PNS Pipeline (5-area load frequency control)

역할:
- area 연속시간 모델 → 정확한 ZOH 이산화 (augmented 행렬 지수 한 번)
- 제어 측 Network (area 당 서브시스템, 결합 = 이웃 Δθ)
- 진단 측 확장 모델 (공유 Δθ 레지스트리)
- 부하 표 → 외생 입력 e_i(t) + 평형점 이동 일정

area i 상태: (Δθ, Δω, ΔP_m, ΔP_v), 입력 ΔP_ref
    Δθ̇  = Δω
    Δω̇  = (ΔP_m − D Δω − Σ_j P_ij(Δθ_i − Δθ_j) − ΔP_L) / 2H
    ΔṖ_m = (ΔP_v − ΔP_m) / T_t
    ΔṖ_v = (ΔP_ref − Δω / R − ΔP_v) / T_g

주의:
- 이웃이 분리되어도 tie-line 자기 항 −ΣP/2H 은 A_ii 에 남는다 (이웃 = 각도 0 모선).
- 평형점: x_s = (0, 0, ΔP_L, ΔP_L), u_s = ΔP_L
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import expm

from app.pipeline.design import DesignOptions, MatchedBounds
from app.pipeline.engine import ScenarioBundle, SetpointChange
from app.pipeline.network import (
    DiagSubsystemModel,
    FaultSpec,
    LayoutEntry,
    Network,
    SubsystemModel,
    resolve_map,
)
from app.services.polytope_service import Interval, box
from modules.pns.config import PnsConfig


# -----------------------------
# Area Model
# -----------------------------
@dataclass
class AreaMatrices:
    A: np.ndarray  # (4, 4)
    B: np.ndarray  # (4, 1)
    L: np.ndarray  # (4,)  부하 입력 열
    couplings: Dict[int, np.ndarray]  # 이웃 j → Δθ_j 열 (4,)


def neighbors(cfg: PnsConfig, i: int) -> List[int]:
    return sorted(j for (a, j) in cfg.tie_coefficients() if a == i)


def area_continuous(cfg: PnsConfig, i: int, *, H: Optional[float] = None) -> AreaMatrices:
    k = i - 1
    H = cfg.H[k] if H is None else H
    D, Tt, Tg, R = cfg.D[k], cfg.Tt[k], cfg.Tg[k], cfg.R[k]
    ties = cfg.tie_coefficients()
    nbrs = neighbors(cfg, i)
    p_sum = sum(ties[(i, j)] for j in nbrs)

    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [-p_sum / (2 * H), -D / (2 * H), 1.0 / (2 * H), 0.0],
            [0.0, 0.0, -1.0 / Tt, 1.0 / Tt],
            [0.0, -1.0 / (R * Tg), 0.0, -1.0 / Tg],
        ]
    )
    B = np.array([[0.0], [0.0], [0.0], [1.0 / Tg]])
    L = np.array([0.0, -1.0 / (2 * H), 0.0, 0.0])
    couplings = {j: np.array([0.0, ties[(i, j)] / (2 * H), 0.0, 0.0]) for j in nbrs}
    return AreaMatrices(A=A, B=B, L=L, couplings=couplings)


def discretize(area: AreaMatrices, Ts: float) -> AreaMatrices:
    """
    ZOH 정확 이산화: expm([[A, B L C…], [0, 0]] Ts) 의 상단 블록
    """
    order = sorted(area.couplings)
    inputs = np.column_stack([area.B[:, 0], area.L] + [area.couplings[j] for j in order])
    n, q = area.A.shape[0], inputs.shape[1]
    M = np.zeros((n + q, n + q))
    M[:n, :n] = area.A
    M[:n, n:] = inputs
    E = expm(M * Ts)
    gamma = E[:n, n:]
    return AreaMatrices(
        A=E[:n, :n],
        B=gamma[:, :1],
        L=gamma[:, 1],
        couplings={j: gamma[:, 2 + pos] for pos, j in enumerate(order)},
    )


def area_discrete(cfg: PnsConfig, i: int, *, H: Optional[float] = None) -> AreaMatrices:
    return discretize(area_continuous(cfg, i, H=H), cfg.Ts)


# -----------------------------
# Load Schedule
# -----------------------------
def load_level(cfg: PnsConfig, i: int, t: int) -> float:
    """
    area i 의 누적 ΔP_L(t)
    """
    return float(sum(d for (time, area, d) in cfg.load_table if int(area) == i and int(time) <= t))


def setpoint_schedule(cfg: PnsConfig) -> List[SetpointChange]:
    changes: List[SetpointChange] = []
    for i in range(1, cfg.n_areas + 1):
        times = sorted({int(time) for (time, area, _) in cfg.load_table if int(area) == i})
        for t in times:
            level = load_level(cfg, i, t)
            changes.append(
                SetpointChange(
                    time=t,
                    subsystem=i,
                    x_s=np.array([0.0, 0.0, level, level]),
                    u_s=np.array([level]),
                )
            )
    return sorted(changes, key=lambda c: (c.time, c.subsystem))


# -----------------------------
# Subsystem Builders
# -----------------------------
def _state_bounds(cfg: PnsConfig) -> np.ndarray:
    return np.array([cfg.theta_max, cfg.omega_max, cfg.pm_max, cfg.pv_max])


def build_area(cfg: PnsConfig, i: int, disc: Dict[int, AreaMatrices]) -> SubsystemModel:
    d = disc[i]
    parents = sorted(d.couplings)
    w_matrix = np.column_stack([d.couplings[j] for j in parents])
    L = d.L.copy()

    return SubsystemModel(
        id=i,
        A=d.A,
        B=d.B,
        g=resolve_map("unit_gain"),
        h=resolve_map("zero_drift", m=1),
        w=resolve_map("linear_coupling", matrix=w_matrix),
        X=box(np.zeros(4), _state_bounds(cfg)),
        U=box(np.zeros(1), cfg.u_max),
        O=box(np.zeros(4), cfg.rho_bound),
        parents=tuple(parents),
        psi_layout=tuple((j, 0) for j in parents),
        exogenous=lambda t, L=L, i=i: L * load_level(cfg, i, t),
        w_matrix=w_matrix,
        feedback="measured",
        map_names={"g": "unit_gain", "h": "zero_drift", "w": "linear_coupling"},
        state_names=("dtheta", "domega", "dPm", "dPv"),
    )


def build_area_diag(cfg: PnsConfig, i: int, disc: Dict[int, AreaMatrices]) -> DiagSubsystemModel:
    """
    진단 확장 모델

    - 소유 행: Ã 에 감시 중인 이웃 Δθ 열, 감시하지 않는 parent Δθ 는 z 로 bound
    - 감시 중인 이웃 Δθ_j 행: Ã 는 감시 열만, 나머지(이웃의 ω, P_m, P_v, 입력, 비감시 Δθ)는 상수 bound
    """
    extra = [int(j) for j in cfg.fd_shared_angles.get(i, [])]
    shared_by_others = {int(j) for angles in cfg.fd_shared_angles.values() for j in angles}

    layout = [LayoutEntry(i, c, shared_id=i if (c == 0 and i in shared_by_others) else None) for c in range(4)]
    layout += [LayoutEntry(j, 0, shared_id=j) for j in extra]
    angle_col = {i: 0, **{j: 4 + pos for pos, j in enumerate(extra)}}
    n_t = len(layout)

    own = disc[i]
    z_parents = [j for j in sorted(own.couplings) if j not in angle_col]
    xmax = _state_bounds(cfg)

    A_t = np.zeros((n_t, n_t))
    B_t = np.zeros((n_t, 1))
    C_z = np.zeros((n_t, len(z_parents)))
    const = np.zeros(n_t)

    A_t[:4, :4] = own.A
    B_t[:4] = own.B
    for j, col in own.couplings.items():
        if j in angle_col:
            A_t[:4, angle_col[j]] += col
        else:
            C_z[:4, z_parents.index(j)] = col

    for pos, j in enumerate(extra):
        row = 4 + pos
        nb = disc[j]
        A_t[row, row] = nb.A[0, 0]
        const[row] = float(np.abs(nb.A[0, 1:]) @ xmax[1:] + abs(nb.B[0, 0]) * cfg.u_max)
        for l, col in nb.couplings.items():
            if l in angle_col:
                A_t[row, angle_col[l]] += col[0]
            else:
                const[row] += abs(col[0]) * cfg.theta_max

    loads = [(r, own.L[r], i) for r in range(4)] + [(4 + pos, disc[j].L[0], j) for pos, j in enumerate(extra)]

    def exogenous(t: int) -> np.ndarray:
        e = np.zeros(n_t)
        for r, coef, area in loads:
            e[r] = coef * load_level(cfg, area, t)
        return e

    x_bounds = np.concatenate([xmax, np.full(len(extra), cfg.theta_max)])
    p_z = len(z_parents)
    return DiagSubsystemModel(
        id=i,
        A_tilde=A_t,
        B_tilde=B_t,
        g_tilde=resolve_map("unit_gain"),
        h_tilde=resolve_map("zero_drift", m=1),
        x_layout=tuple(layout),
        psi_tilde_layout=tuple((j, 0) for j in z_parents),
        X_tilde=box(np.zeros(n_t), x_bounds),
        w_bar=resolve_map(
            "linear_interval_bound",
            matrix=C_z,
            theta_bar=[cfg.rho_bound] * p_z,
            constant=const,
        ),
        rho_bar=np.full(n_t, cfg.rho_bound),
        exogenous=exogenous,
        dg_bar=0.0,
        dh_bar=0.0,
        psi_tilde_box=box(np.zeros(p_z), cfg.theta_max) if p_z else None,
    )


def inertia_fault(cfg: PnsConfig) -> FaultSpec:
    """
    관성 상수 감소: φ = (고장 모델 다음 상태) − (정상 모델 다음 상태)
    """
    i = cfg.fault_target
    nominal = area_discrete(cfg, i)
    faulty = area_discrete(cfg, i, H=cfg.fault_H)
    parents = sorted(nominal.couplings)
    dA = faulty.A - nominal.A
    dB = faulty.B - nominal.B
    dL = faulty.L - nominal.L
    dW = np.column_stack([faulty.couplings[j] - nominal.couplings[j] for j in parents])

    def fault_map(x: np.ndarray, psi: np.ndarray, u: np.ndarray, t: int) -> np.ndarray:
        return dA @ x + dB @ np.atleast_1d(u) + dW @ psi + dL * load_level(cfg, i, t)

    return FaultSpec(
        target=i,
        onset=cfg.fault_onset,
        fault_map=fault_map,
        mode="additive_state",
        name=f"H{i}: {cfg.H[i - 1]} -> {cfg.fault_H}",
    )


def design_options(cfg: PnsConfig, *, seed: int) -> DesignOptions:
    d = cfg.design
    return DesignOptions(
        Q=np.diag(d.Q),
        R=np.array([[d.R]]),
        N=d.N,
        omega=d.omega,
        coupling_method="interval",
        seed=seed,
        matched_bounds=MatchedBounds(G=Interval(1.0, 1.0), H=box(np.zeros(1), 0.0), source="closed_form"),
    )


# -----------------------------
# Public API
# -----------------------------
def build_pns(cfg: PnsConfig) -> Network:
    cfg.validate()
    ids = range(1, cfg.n_areas + 1)
    disc = {i: area_discrete(cfg, i) for i in ids}
    subsystems: Dict[int, Tuple[SubsystemModel, DiagSubsystemModel]] = {
        i: (build_area(cfg, i, disc), build_area_diag(cfg, i, disc)) for i in ids
    }
    return Network(subsystems=subsystems, name="pns")


def build_bundle(cfg: PnsConfig, *, seed: int = 0, steps: int = 100) -> ScenarioBundle:
    net = build_pns(cfg)
    options = design_options(cfg, seed=seed)
    return ScenarioBundle(
        name="pns",
        network=net,
        initial_states={i: np.zeros(4) for i in net.ids},
        design_options={i: options for i in net.ids},
        faults=[inertia_fault(cfg)] if cfg.fault_enabled else [],
        setpoints=setpoint_schedule(cfg),
        lam=cfg.lam,
        seed=seed,
        steps=steps,
        sample_time=cfg.Ts,
    )
