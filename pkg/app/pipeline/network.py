# pnpdm/app/pipeline/network.py
"""
Network Stage (dual-decomposed large-scale system)

역할:
- 제어 측 서브시스템 모델(SubsystemModel)과 진단 측 확장 모델(DiagSubsystemModel)
- 결합 그래프(parent → child), 공유 변수 레지스트리(S^k), plug/unplug 상태, 이벤트 로그
- 플랜트 한 스텝 진행(step_plant), 측정(measure), 결합 변수 조립(assemble_psi)

부호 규약:
- x⁺ = A x + B[g(x,ψ)u − h(x,ψ)] + w(ψ) + e(t)
  h는 제어 법칙이 되돌려 더하는 정합 drift, e(t)는 알려진 외생 입력(부하 등)
- 진단 모델도 같은 규약: x̃⁺ = Ã x̃ + B̃[g̃u − h̃] + w̃ + ẽ(t) + φ

주의:
- 분리된(unplug) 서브시스템은 마지막 상태로 고정되고 입력을 받지 않는다.
  자식은 ψ에서 그 성분을 0으로 본다.
- 비선형 사상은 등록된 이름으로만 참조한다 (코드 직렬화 없음).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.config import INVERTIBILITY_TOL
from app.core.errors import ConfigError, DimensionMismatch, InvertibilityFault, MissingInput
from app.core.guards import require_finite, require_same_dimension
from app.services.bounds_service import sample_box
from app.services.noise_service import NoiseSource
from app.services.polytope_service import HPolytope, interval_hull


logger = logging.getLogger(__name__)

MatchedGain = Callable[[np.ndarray, np.ndarray], float]
MatchedDrift = Callable[[np.ndarray, np.ndarray], np.ndarray]
CouplingMap = Callable[[np.ndarray], np.ndarray]
CouplingBound = Callable[[np.ndarray, np.ndarray], np.ndarray]
Exogenous = Callable[[int], np.ndarray]
Successor = Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]
FaultMap = Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]

FaultMode = Literal["additive_state", "actuator_override"]
FeedbackMode = Literal["state", "measured"]


# -----------------------------
# Map Registry
# -----------------------------
_MAP_REGISTRY: Dict[str, Callable[..., Callable]] = {}


def register_map(name: str) -> Callable[[Callable[..., Callable]], Callable[..., Callable]]:
    """
    비선형 사상 factory 등록 데코레이터
    """

    def decorator(factory: Callable[..., Callable]) -> Callable[..., Callable]:
        _MAP_REGISTRY[name] = factory
        return factory

    return decorator


def resolve_map(name: str, **params) -> Callable:
    """
    등록된 이름 + 파라미터 블록 → 실제 사상

    Raises:
        ConfigError: 등록되지 않은 이름
    """
    factory = _MAP_REGISTRY.get(name)
    if factory is None:
        raise ConfigError(f"Unknown map name: {name}")
    return factory(**params)


def registered_maps() -> List[str]:
    return sorted(_MAP_REGISTRY)


@register_map("unit_gain")
def _unit_gain() -> MatchedGain:
    return lambda x, psi: 1.0


@register_map("zero_drift")
def _zero_drift(m: int = 1) -> MatchedDrift:
    return lambda x, psi: np.zeros(m)


@register_map("linear_coupling")
def _linear_coupling(matrix: Sequence[Sequence[float]]) -> CouplingMap:
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    return lambda psi: M @ np.asarray(psi, dtype=float) if M.shape[1] else np.zeros(M.shape[0])


@register_map("linear_interval_bound")
def _linear_interval_bound(
    matrix: Sequence[Sequence[float]],
    theta_bar: Sequence[float],
    constant: Optional[Sequence[float]] = None,
) -> CouplingBound:
    """
    w = C ψ, ψ = z − θ, |θ| <= θ̄  →  |w| <= |C| ((|z| + θ̄) ⊙ active) + constant
    """
    C = np.abs(np.atleast_2d(np.asarray(matrix, dtype=float)))
    theta = np.asarray(theta_bar, dtype=float)
    const = np.zeros(C.shape[0]) if constant is None else np.asarray(constant, dtype=float)

    def bound(z: np.ndarray, active: np.ndarray) -> np.ndarray:
        if C.shape[1] == 0:
            return const.copy()
        mag = (np.abs(np.asarray(z, dtype=float)) + theta) * np.asarray(active, dtype=float)
        return C @ mag + const

    return bound


# -----------------------------
# Data Models
# -----------------------------
@dataclass
class SubsystemModel:
    id: int
    A: np.ndarray
    B: np.ndarray
    g: MatchedGain
    h: MatchedDrift
    w: CouplingMap
    X: HPolytope
    U: HPolytope
    O: HPolytope
    parents: Tuple[int, ...] = ()
    psi_layout: Tuple[Tuple[int, int], ...] = ()
    children: Tuple[int, ...] = ()
    exogenous: Optional[Exogenous] = None
    w_matrix: Optional[np.ndarray] = None  # w(ψ) = w_matrix @ ψ 일 때 (정확한 interval bound용)
    successor: Optional[Successor] = None  # 플랜트 대체 모델 (예: 연속시간 적분)
    feedback: FeedbackMode = "state"
    map_names: Dict[str, str] = field(default_factory=dict)
    state_names: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def m(self) -> int:
        return int(self.B.shape[1])

    @property
    def p(self) -> int:
        return len(self.psi_layout)

    def exo(self, t: int) -> np.ndarray:
        if self.exogenous is None:
            return np.zeros(self.n)
        return np.asarray(self.exogenous(t), dtype=float)

    def matched_input(self, x: np.ndarray, psi: np.ndarray, u: np.ndarray) -> np.ndarray:
        """
        g(x,ψ)u − h(x,ψ)
        """
        return float(self.g(x, psi)) * np.asarray(u, dtype=float) - np.asarray(self.h(x, psi), dtype=float)

    def discrete_successor(self, x: np.ndarray, psi: np.ndarray, u: np.ndarray, t: int) -> np.ndarray:
        return self.A @ x + self.B @ self.matched_input(x, psi, u) + np.asarray(self.w(psi), dtype=float) + self.exo(t)

    def plant_successor(self, x: np.ndarray, psi: np.ndarray, u: np.ndarray, t: int) -> np.ndarray:
        if self.successor is not None:
            return np.asarray(self.successor(x, psi, u, t), dtype=float)
        return self.discrete_successor(x, psi, u, t)


@dataclass(frozen=True)
class LayoutEntry:
    subsystem: int  # 물리 변수의 소유 서브시스템
    component: int  # 소유 서브시스템 상태 벡터 안의 위치
    shared_id: Optional[int] = None  # 공유 변수 전역 id k


@dataclass
class DiagSubsystemModel:
    id: int
    A_tilde: np.ndarray
    B_tilde: np.ndarray
    g_tilde: MatchedGain
    h_tilde: MatchedDrift
    x_layout: Tuple[LayoutEntry, ...]
    psi_tilde_layout: Tuple[Tuple[int, int], ...]
    X_tilde: HPolytope
    w_bar: CouplingBound
    rho_bar: np.ndarray
    w_tilde: Optional[CouplingMap] = None
    exogenous: Optional[Exogenous] = None
    dg_bar: Optional[float] = None  # closed-form 값이 있으면 샘플링 대신 사용
    dh_bar: Optional[float] = None
    psi_tilde_box: Optional[HPolytope] = None

    @property
    def n_tilde(self) -> int:
        return int(self.A_tilde.shape[0])

    def exo(self, t: int) -> np.ndarray:
        if self.exogenous is None:
            return np.zeros(self.n_tilde)
        return np.asarray(self.exogenous(t), dtype=float)

    def shared_components(self) -> List[Tuple[int, int]]:
        """
        (local index, 전역 id k) 목록
        """
        return [(idx, e.shared_id) for idx, e in enumerate(self.x_layout) if e.shared_id is not None]

    def local_index(self, subsystem: int, component: int) -> Optional[int]:
        for idx, e in enumerate(self.x_layout):
            if e.subsystem == subsystem and e.component == component:
                return idx
        return None


@dataclass(frozen=True)
class SharedMember:
    subsystem: int
    component: int  # 해당 진단 모델 안의 local index


@dataclass
class NetworkEvent:
    time: int
    kind: str
    target: int
    affected: Tuple[int, ...] = ()
    reason: str = ""


@dataclass
class FaultSpec:
    """
    additive_state: x⁺ += φ(x, ψ, u, t)
    actuator_override: 실제 인가 입력을 fault_map(x, ψ, u, t) 값으로 대체
    """

    target: int
    onset: int
    fault_map: FaultMap
    mode: FaultMode = "additive_state"
    clear_at: Optional[int] = None
    name: str = ""

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise ConfigError(f"fault onset must be >= 0, got {self.onset}")
        if self.mode not in ("additive_state", "actuator_override"):
            raise ConfigError(f"Unsupported fault mode: {self.mode}")

    def is_active(self, t: int) -> bool:
        return self.onset <= t and (self.clear_at is None or t < self.clear_at)

    def evaluate(self, x: np.ndarray, psi: np.ndarray, u: np.ndarray, t: int) -> np.ndarray:
        """
        비활성 구간에서는 additive는 0, override는 명령 입력 그대로
        """
        if not self.is_active(t):
            if self.mode == "additive_state":
                return np.zeros_like(np.asarray(x, dtype=float))
            return np.asarray(u, dtype=float)
        return np.asarray(self.fault_map(x, psi, u, t), dtype=float)


# -----------------------------
# Network
# -----------------------------
class Network:
    """
    살아있는 결합 구조: 활성 집합, 공유 변수 레지스트리, 이벤트 로그
    """

    def __init__(
        self,
        *,
        subsystems: Mapping[int, Tuple[SubsystemModel, DiagSubsystemModel]],
        name: str = "",
    ) -> None:
        self.name = name
        ids = sorted(subsystems)
        children: Dict[int, List[int]] = {i: [] for i in ids}
        for i in ids:
            for j in subsystems[i][0].parents:
                if j not in children:
                    raise ConfigError(f"subsystem {i} lists unknown parent {j}")
                children[j].append(i)
        self.subsystems: Dict[int, Tuple[SubsystemModel, DiagSubsystemModel]] = {
            i: (replace(subsystems[i][0], children=tuple(sorted(children[i]))), subsystems[i][1]) for i in ids
        }
        self.active: set[int] = set(ids)
        self.event_log: List[NetworkEvent] = []
        self.shared_registry: Dict[int, Tuple[SharedMember, ...]] = self._build_registry()
        self._shared_owner: Dict[int, int] = self._build_owners()
        self.validate()

    # ---- structure ----
    @property
    def ids(self) -> List[int]:
        return sorted(self.subsystems)

    def model(self, i: int) -> SubsystemModel:
        self._require_known(i)
        return self.subsystems[i][0]

    def diag(self, i: int) -> DiagSubsystemModel:
        self._require_known(i)
        return self.subsystems[i][1]

    def parents(self, i: int) -> Tuple[int, ...]:
        return self.model(i).parents

    def children(self, i: int) -> Tuple[int, ...]:
        return self.model(i).children

    def is_active(self, i: int) -> bool:
        return i in self.active

    def members(self, k: int) -> Tuple[SharedMember, ...]:
        """
        현재 활성 서브시스템만으로 이루어진 S^k
        """
        return tuple(m for m in self.shared_registry[k] if m.subsystem in self.active)

    def owner(self, k: int) -> int:
        return self._shared_owner[k]

    def shared_ids_of(self, i: int) -> List[int]:
        return [k for _, k in self.diag(i).shared_components()]

    def sharing_partners(self, j: int) -> set[int]:
        """
        j와 공유 변수를 가진 다른 서브시스템
        """
        partners: set[int] = set()
        for members in self.shared_registry.values():
            ids = {m.subsystem for m in members}
            if j in ids:
                partners |= ids - {j}
        return partners

    # ---- plug state ----
    def deactivate(self, j: int) -> None:
        self._require_known(j)
        self.active.discard(j)

    def activate(self, j: int) -> None:
        self._require_known(j)
        self.active.add(j)

    def log_event(self, event: NetworkEvent) -> None:
        self.event_log.append(event)

    def snapshot(self) -> Dict[str, object]:
        """
        구조 지문 (plug/unplug 왕복 비교용)
        """
        return {
            "active": sorted(self.active),
            "members": {k: [(m.subsystem, m.component) for m in self.members(k)] for k in sorted(self.shared_registry)},
            "parents": {i: list(self.parents(i)) for i in self.ids},
            "psi_layout": {i: list(self.model(i).psi_layout) for i in self.ids},
        }

    # ---- validation ----
    def validate(self) -> None:
        """
        구조 불변식 확인

        Raises:
            ConfigError: layout / registry 불일치
        """
        for i in self.ids:
            model, diag = self.subsystems[i]
            if model.id != i or diag.id != i:
                raise ConfigError(f"subsystem key {i} does not match model ids ({model.id}, {diag.id})")
            if i in model.parents:
                raise ConfigError(f"subsystem {i} lists itself as a parent")
            for j, c in model.psi_layout:
                if j not in model.parents:
                    raise ConfigError(f"psi layout of {i} references non-parent {j}")
                if not 0 <= c < self.subsystems[j][0].n:
                    raise ConfigError(f"psi layout of {i} references component {c} of {j}")
            for e in diag.x_layout:
                if e.subsystem != i and e.subsystem not in model.parents:
                    raise ConfigError(f"diagnosis layout of {i} reads non-parent {e.subsystem}")
            for j, _ in diag.psi_tilde_layout:
                if j not in model.parents:
                    raise ConfigError(f"diagnosis psi layout of {i} references non-parent {j}")
            require_same_dimension(diag.n_tilde, diag.rho_bar.size, what=f"rho_bar of {i}")
            for idx, k in diag.shared_components():
                if SharedMember(i, idx) not in self.shared_registry.get(k, ()):
                    raise ConfigError(f"shared component {idx} of {i} missing from S^{k}")

    # ---- internals ----
    def _build_registry(self) -> Dict[int, Tuple[SharedMember, ...]]:
        registry: Dict[int, List[SharedMember]] = {}
        for i in self.ids:
            for idx, k in self.subsystems[i][1].shared_components():
                registry.setdefault(k, []).append(SharedMember(i, idx))
        return {k: tuple(sorted(v, key=lambda m: m.subsystem)) for k, v in sorted(registry.items())}

    def _build_owners(self) -> Dict[int, int]:
        owners: Dict[int, int] = {}
        for k, members in self.shared_registry.items():
            entries = {self.subsystems[m.subsystem][1].x_layout[m.component] for m in members}
            physical = {(e.subsystem, e.component) for e in entries}
            if len(physical) != 1:
                raise ConfigError(f"shared variable {k} maps to several physical states: {sorted(physical)}")
            owners[k] = next(iter(physical))[0]
        return owners

    def _require_known(self, i: int) -> None:
        if i not in self.subsystems:
            raise KeyError(f"unknown subsystem id: {i}")


# -----------------------------
# Public API
# -----------------------------
def assemble_psi(net: Network, i: int, states: Mapping[int, np.ndarray]) -> np.ndarray:
    """
    psi_layout 순서의 결합 변수 벡터. 분리된 parent 성분은 0.

    Raises:
        KeyError: 알 수 없는 id
    """
    model = net.model(i)
    values = [float(states[j][c]) if net.is_active(j) else 0.0 for j, c in model.psi_layout]
    return np.asarray(values, dtype=float)


def retired_mask(net: Network, i: int) -> np.ndarray:
    """
    소유 서브시스템이 분리되어 더 이상 감시하지 않는 진단 성분
    """
    diag = net.diag(i)
    return np.asarray([e.subsystem != i and not net.is_active(e.subsystem) for e in diag.x_layout], dtype=bool)


def step_plant(
    net: Network,
    states: Mapping[int, np.ndarray],
    inputs: Mapping[int, np.ndarray],
    faults: Sequence[FaultSpec],
    t: int,
    *,
    effects_out: Optional[Dict[int, np.ndarray]] = None,
) -> Dict[int, np.ndarray]:
    """
    모든 서브시스템의 다음 상태

    Args:
        net: 네트워크
        states: 현재 상태
        inputs: 활성 서브시스템의 명령 입력
        faults: 고장 목록
        t: 현재 step
        effects_out: 주어지면 서브시스템별 실제 고장 효과(실제 다음 상태 − 무고장 다음 상태)를 기록

    Raises:
        MissingInput: 활성 서브시스템 입력 누락
        NumericalFault: 비유한 상태
    """
    successors: Dict[int, np.ndarray] = {}
    for i in net.ids:
        x = require_finite(f"state of subsystem {i}", states[i])
        if not net.is_active(i):
            successors[i] = x.copy()
            if effects_out is not None:
                effects_out[i] = np.zeros_like(x)
            continue
        if i not in inputs:
            raise MissingInput(f"missing input for active subsystem {i}")

        model = net.model(i)
        psi = assemble_psi(net, i, states)
        u_cmd = np.atleast_1d(np.asarray(inputs[i], dtype=float))
        own_faults = [f for f in faults if f.target == i and f.is_active(t)]

        u_applied = u_cmd
        for f in own_faults:
            if f.mode == "actuator_override":
                u_applied = np.atleast_1d(f.evaluate(x, psi, u_cmd, t))
                logger.debug("t=%d subsystem %d: input %s overridden by %s", t, i, u_cmd, u_applied)

        x_next = model.plant_successor(x, psi, u_applied, t)
        for f in own_faults:
            if f.mode == "additive_state":
                x_next = x_next + f.evaluate(x, psi, u_applied, t)

        successors[i] = require_finite(f"successor of subsystem {i}", x_next)
        if effects_out is not None:
            clean = model.plant_successor(x, psi, u_cmd, t) if own_faults else x_next
            effects_out[i] = successors[i] - clean
    return successors


def measure(
    net: Network,
    states: Mapping[int, np.ndarray],
    noise_source: NoiseSource,
    t: int = 0,
) -> Dict[int, np.ndarray]:
    """
    y_i = x̃_i + ρ_i  (x_layout 순서, 공유 성분은 소유 서브시스템의 실제 상태에서 읽음)

    소유 서브시스템이 분리된 성분은 잡음 없이 정확히 0.
    """
    out: Dict[int, np.ndarray] = {}
    for i in net.ids:
        diag = net.diag(i)
        retired = retired_mask(net, i)
        truth = np.asarray(
            [0.0 if r else float(states[e.subsystem][e.component]) for e, r in zip(diag.x_layout, retired)],
            dtype=float,
        )
        noise = noise_source.draw(step=t, subsystem=i, bound=diag.rho_bar)
        out[i] = truth + np.where(retired, 0.0, noise)
    return out


def assemble_z(
    net: Network,
    i: int,
    measurements: Mapping[int, np.ndarray],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    진단용 측정 결합 변수 z_i = ψ̃_i + θ_i (parent가 측정한 자기 성분)

    Returns:
        (z, active mask)
    """
    diag = net.diag(i)
    values: List[float] = []
    active: List[bool] = []
    for j, c in diag.psi_tilde_layout:
        if not net.is_active(j):
            values.append(0.0)
            active.append(False)
            continue
        idx = net.diag(j).local_index(j, c)
        if idx is None:
            raise ConfigError(f"subsystem {j} does not measure its own component {c}")
        values.append(float(measurements[j][idx]))
        active.append(True)
    return np.asarray(values, dtype=float), np.asarray(active, dtype=bool)


def theta_bar(net: Network, i: int) -> np.ndarray:
    """
    z_i 의 측정 오차 상한 θ̄_i (parent가 자기 성분을 잴 때의 ρ̄)
    """
    values: List[float] = []
    for j, c in net.diag(i).psi_tilde_layout:
        parent = net.diag(j)
        idx = parent.local_index(j, c)
        values.append(0.0 if idx is None else float(parent.rho_bar[idx]))
    return np.asarray(values, dtype=float)


# -----------------------------
# Model Certificates
# -----------------------------
def is_stabilizable(A: np.ndarray, B: np.ndarray, tol: float = 1e-9) -> bool:
    """
    PBH 판정: |λ| >= 1 인 고유값마다 rank [A − λI, B] = n
    """
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0 - tol:
            continue
        M = np.hstack([A - lam * np.eye(n), B])
        if np.linalg.matrix_rank(M, tol=1e-8) < n:
            return False
    return True


def psi_box(model: SubsystemModel, parent_sets: Mapping[int, HPolytope]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ψ_i 의 축 정렬 범위 (parent 집합의 interval hull에서 psi_layout 성분만)
    """
    lo: List[float] = []
    hi: List[float] = []
    for j, c in model.psi_layout:
        if j not in parent_sets:
            raise ConfigError(f"parent set of {j} missing for subsystem {model.id}")
        hull = interval_hull(parent_sets[j])
        lo.append(float(hull.center[c] - hull.half_widths[c]))
        hi.append(float(hull.center[c] + hull.half_widths[c]))
    return np.asarray(lo), np.asarray(hi)


def state_box(p: HPolytope) -> Tuple[np.ndarray, np.ndarray]:
    hull = interval_hull(p)
    return hull.center - hull.half_widths, hull.center + hull.half_widths


def validate_model(
    model: SubsystemModel,
    *,
    parent_sets: Optional[Mapping[int, HPolytope]] = None,
    n_samples: int = 500,
    seed: int = 0,
) -> None:
    """
    모델 가정 확인: 차원, 안정화 가능성, 제약 집합의 원점 내부 포함, g의 가역성(샘플 인증)

    Raises:
        DimensionMismatch / ConfigError / InvertibilityFault
    """
    n, m = model.n, model.m
    if model.A.shape != (n, n) or model.B.shape[0] != n:
        raise DimensionMismatch(f"subsystem {model.id}: A{model.A.shape}, B{model.B.shape}")
    if model.X.dim != n or model.O.dim != n or model.U.dim != m:
        raise DimensionMismatch(f"subsystem {model.id}: constraint set dimensions do not match (n={n}, m={m})")
    if not is_stabilizable(model.A, model.B):
        raise ConfigError(f"subsystem {model.id}: (A, B) is not stabilizable")
    for name, p in (("X", model.X), ("U", model.U), ("O", model.O)):
        if not p.bounded or np.any(p.offsets <= 0):
            raise ConfigError(f"subsystem {model.id}: {name} must be bounded with the origin in its interior")

    lo_x, hi_x = state_box(model.X)
    if parent_sets is not None and model.p:
        lo_p, hi_p = psi_box(model, parent_sets)
    else:
        lo_p, hi_p = np.zeros(model.p), np.zeros(model.p)
    samples = sample_box(np.concatenate([lo_x, lo_p]), np.concatenate([hi_x, hi_p]), n_samples, seed)
    for s in samples:
        gain = float(model.g(s[:n], s[n:]))
        if abs(gain) < INVERTIBILITY_TOL:
            raise InvertibilityFault(f"subsystem {model.id}: g vanishes at x={s[:n]}, psi={s[n:]}")

