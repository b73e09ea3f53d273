# pnpdm/app/pipeline/detect.py
"""
Detect Stage (distributed fault detection)

역할:
- 서브시스템별 진단 유닛(FdUnit): 추정기 x̂̃_i, 적응 임계값 ε̄_i
- 공유 변수 합의: S^k 멤버의 후보 중 selection_score 최소인 하나에 가중치 1
- 검출 판정: |y_{i,k} − x̂_{i,k}| > ε̄_{i,k} 인 성분이 있으면 fault_detected

현재 구현:
- 한 step 은 동기 round: 모든 유닛이 local 항을 계산해 메시지를 발행 → 합의 행 결정 → 일괄 갱신
- 공유 성분 갱신: x̂⁺ = λ(x̂_{j*} − y_i) + pred_{j*},  ε̄⁺ = term_{j*} + λρ̄_i + ρ̄_i
  S^k = {i} 이면 비공유 갱신과 같다.
- 임계값 증분은 noise / coupling / input / drift 로 나눠 기록

주의:
- 소유 서브시스템이 분리된 공유 성분(retired)은 y = x̂ = ε̄ = 0 으로 고정, 검출에서 제외
- 자기 고장을 검출한 유닛은 멈춘다 (마지막 값 유지)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import CommunicationFault, ConfigError
from app.pipeline.network import CouplingBound, DiagSubsystemModel, Network, assemble_z, retired_mask, state_box
from app.services.bounds_service import sample_box, sign_corners


Verdict = Literal["healthy", "fault_detected"]

THRESHOLD_PARTS: Tuple[str, ...] = ("noise", "coupling", "input", "drift")


# -----------------------------
# Data Models
# -----------------------------
@dataclass
class FdUnit:
    id: int
    lam: float
    xhat: np.ndarray
    eps_bar: np.ndarray
    rho_bar: np.ndarray
    w_bar: CouplingBound
    dg_bar: float
    dh_bar: float
    diag_model: DiagSubsystemModel
    z_active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    retired: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    halted: bool = False
    parts: Dict[str, np.ndarray] = field(default_factory=dict)
    picks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self) -> None:
        if not 0.0 < self.lam < 1.0:
            raise ConfigError(f"lambda must lie in (0, 1), got {self.lam}")
        n = self.diag_model.n_tilde
        if self.z_active.size != len(self.diag_model.psi_tilde_layout):
            self.z_active = np.ones(len(self.diag_model.psi_tilde_layout), dtype=bool)
        if self.retired.size != n:
            self.retired = np.zeros(n, dtype=bool)
        if self.picks.size != n:
            self.picks = np.full(n, self.id, dtype=int)
        if not self.parts:
            self.parts = {name: np.zeros(n) for name in THRESHOLD_PARTS}

    @property
    def rho_eff(self) -> np.ndarray:
        return np.where(self.retired, 0.0, self.rho_bar)

    def snapshot(self) -> Dict[str, object]:
        """
        재구성 locality 비교용 파라미터 지문
        """
        return {
            "z_active": self.z_active.tolist(),
            "retired": self.retired.tolist(),
            "halted": self.halted,
            "dg_bar": self.dg_bar,
            "dh_bar": self.dh_bar,
        }


@dataclass
class LocalTerms:
    prediction: np.ndarray  # Ã y + B̃(g̃u − h̃) + ẽ(t)
    term: np.ndarray  # 임계값 괄호 항 (= selection score)
    parts: Dict[str, np.ndarray]  # term − λε̄ 의 분해


@dataclass(frozen=True)
class ConsensusMessage:
    sender: int
    k: int
    estimate: float  # x̂̃_{j,k}
    prediction: float
    threshold_term: float
    selection_score: float
    parts: Tuple[float, ...] = ()  # THRESHOLD_PARTS 순서

    @property
    def estimate_term(self) -> float:
        return self.estimate + self.prediction


@dataclass
class ConsensusRow:
    k: int
    weights: Dict[int, float]

    @property
    def pick(self) -> int:
        return next(j for j, w in sorted(self.weights.items()) if w == 1.0)


@dataclass
class DetectionDecision:
    subsystem: int
    time: int
    component: Optional[int]
    residual: float
    threshold: float
    verdict: Verdict

    @property
    def detected(self) -> bool:
        return self.verdict == "fault_detected"

    def to_dict(self) -> Dict[str, object]:
        return {
            "subsystem": self.subsystem,
            "time": self.time,
            "component": self.component,
            "residual": self.residual,
            "threshold": self.threshold,
            "verdict": self.verdict,
        }


@dataclass
class UnitRound:
    """
    한 round 에서 유닛 하나의 결과 (trace 기록용)
    """

    xhat: np.ndarray
    eps_bar: np.ndarray
    picks: np.ndarray
    parts: Dict[str, np.ndarray]


# -----------------------------
# Unit Construction
# -----------------------------
def make_unit(
    diag: DiagSubsystemModel,
    *,
    lam: float,
    y0: np.ndarray,
    w_bar: Optional[CouplingBound] = None,
    theta_bar: Optional[np.ndarray] = None,
    n_samples: int = 2000,
    seed: int = 0,
) -> FdUnit:
    """
    진단 유닛 초기화: x̂(0) = y(0), ε̄(0) = ρ̄

    Δḡ, Δh̄ 는 진단 모델이 closed-form 값을 주면 그 값을, 아니면 샘플링 추정값을 쓴다.
    """
    if diag.dg_bar is not None and diag.dh_bar is not None:
        dg, dh = float(diag.dg_bar), float(diag.dh_bar)
    else:
        dg, dh = estimate_uncertainty_bounds(diag, theta_bar=theta_bar, n_samples=n_samples, seed=seed)
    return FdUnit(
        id=diag.id,
        lam=float(lam),
        xhat=np.asarray(y0, dtype=float).copy(),
        eps_bar=np.asarray(diag.rho_bar, dtype=float).copy(),
        rho_bar=np.asarray(diag.rho_bar, dtype=float).copy(),
        w_bar=w_bar or diag.w_bar,
        dg_bar=dg,
        dh_bar=dh,
        diag_model=diag,
    )


def estimate_uncertainty_bounds(
    diag: DiagSubsystemModel,
    *,
    theta_bar: Optional[np.ndarray] = None,
    n_samples: int = 2000,
    inflation: float = 0.1,
    seed: int = 0,
) -> Tuple[float, float]:
    """
    Δḡ >= max |g̃(x̃,ψ̃) − g̃(y,z)|,  Δh̄ >= max ‖h̃(x̃,ψ̃) − h̃(y,z)‖∞

    X̃ × Ψ̃ 꼭짓점 + Latin hypercube 점, 측정 오차는 [−ρ̄, ρ̄] × [−θ̄, θ̄] 꼭짓점.

    Returns:
        (Δḡ, Δh̄), 각각 (1 + inflation) 배
    """
    n = diag.n_tilde
    p = len(diag.psi_tilde_layout)
    lo_x, hi_x = state_box(diag.X_tilde)
    if p and diag.psi_tilde_box is not None:
        lo_p, hi_p = state_box(diag.psi_tilde_box)
    else:
        lo_p, hi_p = np.zeros(p), np.zeros(p)
    theta = np.zeros(p) if theta_bar is None else np.asarray(theta_bar, dtype=float)

    points = sample_box(np.concatenate([lo_x, lo_p]), np.concatenate([hi_x, hi_p]), n_samples, seed)
    offsets = sign_corners(np.concatenate([diag.rho_bar, theta]), limit=64, seed=seed)

    dg = 0.0
    dh = 0.0
    for s in points:
        x, psi = s[:n], s[n:]
        g_true = float(diag.g_tilde(x, psi))
        h_true = np.atleast_1d(np.asarray(diag.h_tilde(x, psi), dtype=float))
        for o in offsets:
            y, z = x + o[:n], psi + o[n:]
            dg = max(dg, abs(g_true - float(diag.g_tilde(y, z))))
            diff = h_true - np.atleast_1d(np.asarray(diag.h_tilde(y, z), dtype=float))
            dh = max(dh, float(np.abs(diff).max(initial=0.0)))
    return dg * (1.0 + inflation), dh * (1.0 + inflation)


# -----------------------------
# Local Computation
# -----------------------------
def local_terms(
    unit: FdUnit,
    y: np.ndarray,
    u: np.ndarray,
    z: np.ndarray,
    *,
    t: int = 0,
    z_active: Optional[np.ndarray] = None,
) -> LocalTerms:
    """
    예측값과 임계값 괄호 항

    term = λε̄ + |Ã|ρ̄ + w̄(z) + |B̃|(Δḡ|u| + Δh̄) + λρ̄
    """
    diag = unit.diag_model
    y = np.asarray(y, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    z = np.asarray(z, dtype=float)
    active = unit.z_active if z_active is None else np.asarray(z_active, dtype=bool)

    gain = float(diag.g_tilde(y, z))
    drift = np.atleast_1d(np.asarray(diag.h_tilde(y, z), dtype=float))
    prediction = diag.A_tilde @ y + diag.B_tilde @ (gain * u - drift) + diag.exo(t)

    rho = unit.rho_eff
    abs_B = np.abs(diag.B_tilde)
    parts = {
        "noise": np.abs(diag.A_tilde) @ rho + unit.lam * rho,
        "coupling": np.asarray(unit.w_bar(z, active), dtype=float),
        "input": abs_B @ (unit.dg_bar * np.abs(u)),
        "drift": abs_B @ np.full(u.shape, unit.dh_bar),
    }
    term = unit.lam * unit.eps_bar + sum(parts.values())

    keep = ~unit.retired
    prediction = np.where(keep, prediction, 0.0)
    term = np.where(keep, term, 0.0)
    parts = {name: np.where(keep, value, 0.0) for name, value in parts.items()}
    return LocalTerms(prediction=prediction, term=term, parts=parts)


def publish(unit: FdUnit, terms: LocalTerms) -> List[ConsensusMessage]:
    """
    공유 성분마다 (x̂, pred, term, score) 메시지. retired 성분은 보내지 않는다.
    """
    messages = []
    for idx, k in unit.diag_model.shared_components():
        if unit.retired[idx]:
            continue
        messages.append(
            ConsensusMessage(
                sender=unit.id,
                k=k,
                estimate=float(unit.xhat[idx]),
                prediction=float(terms.prediction[idx]),
                threshold_term=float(terms.term[idx]),
                selection_score=float(terms.term[idx]),
                parts=tuple(float(terms.parts[name][idx]) for name in THRESHOLD_PARTS),
            )
        )
    return messages


def consensus_weights(k: int, candidates: Sequence[ConsensusMessage]) -> ConsensusRow:
    """
    selection_score 최소 후보에 가중치 1 (동률이면 작은 id)

    Raises:
        ValueError: 후보 없음
    """
    if not candidates:
        raise ValueError(f"empty candidate list for shared variable {k}")
    best = min(candidates, key=lambda m: (m.selection_score, m.sender))
    return ConsensusRow(k=k, weights={m.sender: 1.0 if m.sender == best.sender else 0.0 for m in candidates})


def estimator_step(
    unit: FdUnit,
    y: np.ndarray,
    u: np.ndarray,
    z: np.ndarray,
    inbox: Sequence[ConsensusMessage],
    rows: Mapping[int, ConsensusRow],
    *,
    t: int = 0,
    terms: Optional[LocalTerms] = None,
) -> np.ndarray:
    """
    x̂⁺ (비공유: λ(x̂ − y) + pred, 공유: λ(x̂_{j*} − y) + pred_{j*})

    Raises:
        CommunicationFault: 가중치 1 송신자의 메시지 누락
    """
    y = np.asarray(y, dtype=float)
    terms = terms or local_terms(unit, y, u, z, t=t)
    xhat = unit.lam * (unit.xhat - y) + terms.prediction
    for idx, k in unit.diag_model.shared_components():
        if unit.retired[idx]:
            continue
        msg = _picked_message(unit, k, inbox, rows)
        xhat[idx] = unit.lam * (msg.estimate - y[idx]) + msg.prediction
    return np.where(unit.retired, 0.0, xhat)


def threshold_step(
    unit: FdUnit,
    u: np.ndarray,
    z: np.ndarray,
    inbox: Sequence[ConsensusMessage],
    rows: Mapping[int, ConsensusRow],
    *,
    y: Optional[np.ndarray] = None,
    t: int = 0,
    terms: Optional[LocalTerms] = None,
) -> np.ndarray:
    """
    ε̄⁺ = term_{j*} + λρ̄_i + ρ̄_i  (비공유는 j* = i)

    Raises:
        CommunicationFault: 가중치 1 송신자의 메시지 누락
    """
    if terms is None:
        y_eval = unit.xhat if y is None else y
        terms = local_terms(unit, y_eval, u, z, t=t)
    rho = unit.rho_eff
    selected = terms.term.copy()
    for idx, k in unit.diag_model.shared_components():
        if unit.retired[idx]:
            continue
        selected[idx] = _picked_message(unit, k, inbox, rows).threshold_term
    eps = selected + unit.lam * rho + rho
    return np.where(unit.retired, 0.0, eps)


def detect(unit: FdUnit, y: np.ndarray, *, t: int = 0) -> DetectionDecision:
    """
    ∃k: |y_k − x̂_k| > ε̄_k 이면 fault_detected (첫 위반 성분 보고)
    """
    residual = np.abs(np.asarray(y, dtype=float) - unit.xhat)
    residual = np.where(unit.retired, 0.0, residual)
    violating = np.flatnonzero(residual > unit.eps_bar)
    if violating.size:
        c = int(violating[0])
        return DetectionDecision(
            subsystem=unit.id,
            time=t,
            component=c,
            residual=float(residual[c]),
            threshold=float(unit.eps_bar[c]),
            verdict="fault_detected",
        )
    ratio = residual / np.where(unit.eps_bar > 0, unit.eps_bar, np.inf)
    c = int(np.argmax(ratio)) if ratio.size else None
    return DetectionDecision(
        subsystem=unit.id,
        time=t,
        component=c,
        residual=float(residual[c]) if c is not None else 0.0,
        threshold=float(unit.eps_bar[c]) if c is not None else 0.0,
        verdict="healthy",
    )


# -----------------------------
# Synchronous Round
# -----------------------------
def exchange_round(
    net: Network,
    units: Mapping[int, FdUnit],
    measurements: Mapping[int, np.ndarray],
    inputs: Mapping[int, np.ndarray],
    t: int,
) -> Dict[int, UnitRound]:
    """
    한 step 의 발행 → 합의 → 갱신. 멈춘 유닛과 분리된 서브시스템은 건너뛴다.

    Returns:
        갱신된 유닛 id → UnitRound
    """
    running = [i for i in sorted(units) if net.is_active(i) and not units[i].halted]

    computed: Dict[int, Tuple[LocalTerms, np.ndarray]] = {}
    mailbox: Dict[int, List[ConsensusMessage]] = {}
    for i in running:
        unit = units[i]
        sync_retired(unit, retired_mask(net, i), measurements[i])
        z, z_live = assemble_z(net, i, measurements)
        unit.z_active = unit.z_active & z_live
        terms = local_terms(unit, measurements[i], inputs[i], z, t=t)
        computed[i] = (terms, z)
        for msg in publish(unit, terms):
            mailbox.setdefault(msg.k, []).append(msg)

    rows = {k: consensus_weights(k, msgs) for k, msgs in sorted(mailbox.items())}

    updates: Dict[int, UnitRound] = {}
    for i in running:
        unit = units[i]
        terms, z = computed[i]
        inbox = [m for k, _ in _shared(unit) for m in mailbox.get(k, [])]
        xhat = estimator_step(unit, measurements[i], inputs[i], z, inbox, rows, t=t, terms=terms)
        eps = threshold_step(unit, inputs[i], z, inbox, rows, t=t, terms=terms)
        picks, parts = _round_parts(unit, terms, inbox, rows)
        updates[i] = UnitRound(xhat=xhat, eps_bar=eps, picks=picks, parts=parts)

    for i, upd in updates.items():
        unit = units[i]
        unit.xhat = upd.xhat
        unit.eps_bar = upd.eps_bar
        unit.picks = upd.picks
        unit.parts = upd.parts
    return updates


def sync_retired(unit: FdUnit, mask: np.ndarray, y: np.ndarray) -> None:
    """
    retired 표시 갱신. 새로 retired → 0 고정, 다시 살아난 성분 → x̂ = y, ε̄ = ρ̄
    """
    mask = np.asarray(mask, dtype=bool)
    revived = unit.retired & ~mask
    unit.xhat = np.where(mask, 0.0, np.where(revived, y, unit.xhat))
    unit.eps_bar = np.where(mask, 0.0, np.where(revived, unit.rho_bar, unit.eps_bar))
    unit.retired = mask.copy()


def restart_unit(unit: FdUnit, y: np.ndarray) -> None:
    """
    plug-in 후 재시작: x̂ = y, ε̄ = ρ̄
    """
    unit.xhat = np.asarray(y, dtype=float).copy()
    unit.eps_bar = unit.rho_bar.copy()
    unit.retired = np.zeros_like(unit.retired)
    unit.z_active = np.ones_like(unit.z_active)
    unit.halted = False


def set_parent_active(unit: FdUnit, parent: int, active: bool) -> bool:
    """
    w̄ 평가에서 parent 성분 포함 여부 변경. 바뀐 항목이 있으면 True.
    """
    changed = False
    for idx, (j, _) in enumerate(unit.diag_model.psi_tilde_layout):
        if j == parent and bool(unit.z_active[idx]) != active:
            unit.z_active[idx] = active
            changed = True
    return changed


# -----------------------------
# Internal Helpers
# -----------------------------
def _shared(unit: FdUnit) -> List[Tuple[int, int]]:
    return [(k, idx) for idx, k in unit.diag_model.shared_components() if not unit.retired[idx]]


def _picked_message(
    unit: FdUnit,
    k: int,
    inbox: Sequence[ConsensusMessage],
    rows: Mapping[int, ConsensusRow],
) -> ConsensusMessage:
    row = rows.get(k)
    if row is None:
        raise CommunicationFault(f"subsystem {unit.id}: no consensus row for shared variable {k}")
    pick = row.pick
    for msg in inbox:
        if msg.k == k and msg.sender == pick:
            return msg
    raise CommunicationFault(f"subsystem {unit.id}: missing message from {pick} for shared variable {k}")


def _round_parts(
    unit: FdUnit,
    terms: LocalTerms,
    inbox: Sequence[ConsensusMessage],
    rows: Mapping[int, ConsensusRow],
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    n = unit.diag_model.n_tilde
    picks = np.full(n, unit.id, dtype=int)
    parts = {name: value.copy() for name, value in terms.parts.items()}
    for idx, k in unit.diag_model.shared_components():
        if unit.retired[idx]:
            picks[idx] = -1
            continue
        msg = _picked_message(unit, k, inbox, rows)
        picks[idx] = msg.sender
        for pos, name in enumerate(THRESHOLD_PARTS):
            parts[name][idx] = msg.parts[pos]
    rho = unit.rho_eff
    parts["noise"] = parts["noise"] + unit.lam * rho + rho
    picks = np.where(unit.retired, -1, picks)
    return picks, parts
