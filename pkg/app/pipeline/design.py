# pnpdm/app/pipeline/design.py
"""
Design Stage (offline tube controller synthesis)

역할:
- 서브시스템별 제어기 C_i 설계 (Step I ~ V)
  - Step III: 결합 외란 집합 W_i, Z̄_i^0 = (1 + inflation)(W_i ⊕ B_ω) ⊆ X_i
  - Step IV: LQR 이득 K, ε-외부근사 mRPI 튜브 Z_i ⊆ X_i
  - Step V: 축소 제약 X̂_i, V_i, 종단 집합 X̂_f
- unplug 이후 재검증(revalidate), 축소된 W로 재설계(retighten)
- 전체 네트워크 설계 (서브시스템끼리 독립 → ThreadPoolExecutor)

현재 구현:
- K: scipy solve_discrete_are 기반 이산시간 LQR
- Z: α/s 반복으로 ⊕_{i<s} A_K^i W_ω 를 만들고 (1−α)⁻¹ 스케일.
  n >= 3 이면 Girard 축약 zonotope 의 facet 법선을 template 으로 삼아 offset 을
  축약 전 합의 support 로 두고, facet 단위 RPI 재인증 ((1+δ) 팽창 또는 template 반복)
- 종단 비용 P: 기본은 Riccati 해, 종단 가중치가 따로 있으면 Lyapunov 해

주의:
- 설계 불가능은 예외가 아니라 InfeasibleDesign 값
- Riccati / LP 수치 실패는 NumericalFault
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.linalg import solve_discrete_are, solve_discrete_lyapunov

from app.core.config import DESIGN_WORKERS, INVERTIBILITY_TOL, MRPI_MAX_S, SET_TOL
from app.core.errors import InvertibilityFault, NumericalFault
from app.core.logging import log_action
from app.pipeline.network import Network, SubsystemModel, psi_box, state_box, validate_model
from app.services.bounds_service import grid, sample_box
from app.services.polytope_service import (
    HPolytope,
    Interval,
    box,
    contains,
    hpoly,
    linear_image_box,
    maximal_admissible_set,
    minkowski_sum,
    point,
    pontryagin_diff,
    scale,
    support_many,
    zonotope,
)


logger = logging.getLogger(__name__)

DesignStep = Literal["III", "IV", "V"]
CouplingMethod = Literal["auto", "interval", "grid"]


# -----------------------------
# Options / Results
# -----------------------------
@dataclass
class MatchedBounds:
    G: Interval  # g⁻¹(X, Ψ) 범위
    H: HPolytope  # h(X, Ψ) 를 감싸는 box (R^m)
    inflation: float = 0.0
    source: str = "closed_form"

    @property
    def h_magnitude(self) -> np.ndarray:
        return np.abs(self.H.center) + self.H.half_widths

    def to_dict(self) -> Dict[str, Any]:
        return {
            "G": self.G.to_dict(),
            "H": self.H.to_dict(),
            "inflation": self.inflation,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "MatchedBounds":
        return cls(
            G=Interval(float(raw["G"]["lo"]), float(raw["G"]["hi"])),
            H=HPolytope.from_dict(raw["H"]),
            inflation=float(raw.get("inflation", 0.0)),
            source=str(raw.get("source", "closed_form")),
        )


@dataclass
class DesignOptions:
    Q: Optional[np.ndarray] = None  # None이면 I
    R: Optional[np.ndarray] = None  # None이면 I
    N: int = 10
    omega: float = 1e-3  # B_ω 반지름
    zbar_inflation: float = 0.05  # Z̄^0 = (1 + zbar_inflation)(W ⊕ B_ω)
    sample_inflation: float = 0.05  # 샘플링 기반 추정 팽창률
    mrpi_eps: float = 1e-3  # W 최대 반폭 대비 상대 ε
    mrpi_max_s: int = MRPI_MAX_S
    max_generators: int = 12
    Qf_gain: Optional[np.ndarray] = None  # 종단 이득용 가중치 (없으면 K_f = K)
    Rf_gain: Optional[np.ndarray] = None
    coupling_method: CouplingMethod = "auto"
    grid_points: int = 11
    n_samples: int = 400
    seed: int = 0
    matched_bounds: Optional[MatchedBounds] = None  # closed-form 제공 시 샘플링 생략
    backend: str = "lqr_mrpi"


@dataclass
class InfeasibleDesign:
    subsystem: int
    step: DesignStep
    reason: str
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subsystem": self.subsystem,
            "step": self.step,
            "reason": self.reason,
            "details": self.details,
        }


@dataclass
class MrpiResult:
    Z: Optional[HPolytope]
    alpha: float
    s: int
    inflation: float  # facet 재인증에서 offset 의 최대 증가율 (스케일만 했으면 δ)
    certified: bool


@dataclass
class RevalidationReport:
    ok: bool
    reason: str
    margin: float  # min_facet [h_Z(n) − h_Z(A_Kᵀn) − h_W(n)]

    def to_dict(self) -> Dict[str, Any]:
        return {"ok": self.ok, "reason": self.reason, "margin": self.margin}


@dataclass
class TubeController:
    id: int
    K: np.ndarray
    Z: HPolytope
    Uz: HPolytope
    Xhat: HPolytope
    V: HPolytope
    Xf: HPolytope
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    N: int
    W: HPolytope  # 결합 외란 W_i
    Zbar0: HPolytope
    omega: float
    K_f: np.ndarray
    A_cl: np.ndarray  # A + B K
    disturbance_margin: HPolytope  # (측정 잡음 image) ⊕ B_ω
    matched: MatchedBounds
    feedback: str = "state"
    terminal_level: float = 0.0
    mrpi_alpha: float = 0.0
    mrpi_s: int = 0
    mrpi_inflation: float = 0.0
    sample_inflation: float = 0.05

    @property
    def n(self) -> int:
        return int(self.K.shape[1])

    @property
    def m(self) -> int:
        return int(self.K.shape[0])

    @property
    def W_total(self) -> HPolytope:
        return minkowski_sum(self.W, self.disturbance_margin)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "K": self.K.tolist(),
            "Z": self.Z.to_dict(),
            "Uz": self.Uz.to_dict(),
            "Xhat": self.Xhat.to_dict(),
            "V": self.V.to_dict(),
            "Xf": self.Xf.to_dict(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "P": self.P.tolist(),
            "N": self.N,
            "W": self.W.to_dict(),
            "Zbar0": self.Zbar0.to_dict(),
            "omega": self.omega,
            "K_f": self.K_f.tolist(),
            "A_cl": self.A_cl.tolist(),
            "disturbance_margin": self.disturbance_margin.to_dict(),
            "matched": self.matched.to_dict(),
            "feedback": self.feedback,
            "terminal_level": self.terminal_level,
            "mrpi_alpha": self.mrpi_alpha,
            "mrpi_s": self.mrpi_s,
            "mrpi_inflation": self.mrpi_inflation,
            "sample_inflation": self.sample_inflation,
        }

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "TubeController":
        def mat(key: str) -> np.ndarray:
            return np.atleast_2d(np.asarray(raw[key], dtype=float))

        def pset(key: str) -> HPolytope:
            return HPolytope.from_dict(raw[key])

        return cls(
            id=int(raw["id"]),
            K=mat("K"),
            Z=pset("Z"),
            Uz=pset("Uz"),
            Xhat=pset("Xhat"),
            V=pset("V"),
            Xf=pset("Xf"),
            Q=mat("Q"),
            R=mat("R"),
            P=mat("P"),
            N=int(raw["N"]),
            W=pset("W"),
            Zbar0=pset("Zbar0"),
            omega=float(raw["omega"]),
            K_f=mat("K_f"),
            A_cl=mat("A_cl"),
            disturbance_margin=pset("disturbance_margin"),
            matched=MatchedBounds.from_dict(raw["matched"]),
            feedback=str(raw.get("feedback", "state")),
            terminal_level=float(raw.get("terminal_level", 0.0)),
            mrpi_alpha=float(raw.get("mrpi_alpha", 0.0)),
            mrpi_s=int(raw.get("mrpi_s", 0)),
            mrpi_inflation=float(raw.get("mrpi_inflation", 0.0)),
            sample_inflation=float(raw.get("sample_inflation", 0.05)),
        )


DesignResult = Union[TubeController, InfeasibleDesign]


# -----------------------------
# Building Blocks
# -----------------------------
def lqr_gain(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    이산시간 LQR: K = −(R + BᵀPB)⁻¹ BᵀPA,  u = K x

    Raises:
        NumericalFault: Riccati 풀이 실패
    """
    try:
        P = solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFault(f"discrete Riccati equation failed: {exc}") from exc
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if not (np.all(np.isfinite(K)) and np.all(np.isfinite(P))):
        raise NumericalFault("discrete Riccati equation returned non-finite values")
    return K, P


def coupling_set(
    model: SubsystemModel,
    parent_sets: Mapping[int, HPolytope],
    *,
    config: Optional[DesignOptions] = None,
) -> HPolytope:
    """
    W_i = w_i(Ψ_i) 를 감싸는 축 정렬 box

    - w_matrix가 있으면 interval 행렬-벡터 곱 (정확)
    - 없으면 Ψ_i 격자 샘플 + sample_inflation

    Args:
        model: 서브시스템 모델
        parent_sets: parent id → 상태 집합 (분리된 parent는 point)
        config: 설계 옵션

    Returns:
        box. parent가 없으면 {0}
    """
    cfg = config or DesignOptions()
    n = model.n
    if model.p == 0:
        return point(n)

    lo, hi = psi_box(model, parent_sets)
    method = cfg.coupling_method
    if method == "auto":
        method = "interval" if model.w_matrix is not None else "grid"

    if method == "interval":
        if model.w_matrix is None:
            raise NotImplementedError(f"Unsupported coupling backend without w_matrix: {method}")
        M = np.asarray(model.w_matrix, dtype=float)
        c = (lo + hi) / 2.0
        r = (hi - lo) / 2.0
        return box(M @ c, np.abs(M) @ r)

    if method != "grid":
        raise NotImplementedError(f"Unsupported coupling backend: {method}")

    if model.p <= 4:
        samples = grid(lo, hi, cfg.grid_points)
    else:
        samples = sample_box(lo, hi, cfg.n_samples, cfg.seed)
    values = np.array([np.asarray(model.w(s), dtype=float) for s in samples])
    w_lo, w_hi = values.min(axis=0), values.max(axis=0)
    center = (w_lo + w_hi) / 2.0
    half = (w_hi - w_lo) / 2.0 * (1.0 + cfg.sample_inflation)
    return box(center, half)


def estimate_matched_bounds(
    model: SubsystemModel,
    *,
    parent_sets: Optional[Mapping[int, HPolytope]] = None,
    n_samples: int = 400,
    inflation: float = 0.05,
    seed: int = 0,
) -> MatchedBounds:
    """
    G ⊇ g⁻¹(X, Ψ), H ⊇ h(X, Ψ) 샘플링 추정

    measured feedback이면 X 대신 X ⊕ O 위에서 평가한다.

    Raises:
        InvertibilityFault: 샘플에서 |g| < 1e-9
    """
    X_eval = minkowski_sum(model.X, model.O) if model.feedback == "measured" else model.X
    lo_x, hi_x = state_box(X_eval)
    if parent_sets is not None and model.p:
        lo_p, hi_p = psi_box(model, parent_sets)
    else:
        lo_p, hi_p = np.zeros(model.p), np.zeros(model.p)

    n = model.n
    samples = sample_box(np.concatenate([lo_x, lo_p]), np.concatenate([hi_x, hi_p]), n_samples, seed)
    inv_g = []
    h_vals = []
    for s in samples:
        gain = float(model.g(s[:n], s[n:]))
        if abs(gain) < INVERTIBILITY_TOL:
            raise InvertibilityFault(f"subsystem {model.id}: g vanishes at x={s[:n]}")
        inv_g.append(1.0 / gain)
        h_vals.append(np.atleast_1d(np.asarray(model.h(s[:n], s[n:]), dtype=float)))

    inv_g = np.asarray(inv_g)
    g_mid = (inv_g.min() + inv_g.max()) / 2.0
    g_half = (inv_g.max() - inv_g.min()) / 2.0 * (1.0 + inflation)
    h_vals = np.asarray(h_vals)
    h_mid = (h_vals.min(axis=0) + h_vals.max(axis=0)) / 2.0
    h_half = (h_vals.max(axis=0) - h_vals.min(axis=0)) / 2.0 * (1.0 + inflation)
    return MatchedBounds(
        G=Interval(g_mid - g_half, g_mid + g_half),
        H=box(h_mid, h_half),
        inflation=inflation,
        source="sampled",
    )


def mrpi(
    A_K: np.ndarray,
    W: HPolytope,
    *,
    eps_rel: float = 1e-3,
    max_s: int = MRPI_MAX_S,
    max_generators: int = 12,
) -> MrpiResult:
    """
    x⁺ = A_K x + w, w ∈ W 의 ε-외부근사 최소 RPI 집합 (W는 원점 중심 box)

    Returns:
        MrpiResult. A_K가 수축하지 않거나 facet 인증이 불가능하면 certified=False
    """
    n = A_K.shape[0]
    hw = W.half_widths
    if not np.any(hw > 0):
        return MrpiResult(Z=point(n), alpha=0.0, s=0, inflation=0.0, certified=True)

    facet_normals = W.normals
    facet_offsets = W.offsets
    live = facet_offsets > 0
    eps = eps_rel * float(hw.max())
    eye = np.eye(n)

    powers = [np.eye(n)]
    ms_sum = np.maximum(support_many(W, eye), support_many(W, -eye))
    alpha = math.inf
    s = 0
    for s in range(1, max_s + 1):
        A_s = powers[-1] @ A_K
        values = support_many(W, facet_normals[live] @ A_s)
        alpha = float(np.max(values / facet_offsets[live]))
        ms = float(ms_sum.max())
        if alpha <= eps / (eps + ms):
            break
        powers.append(A_s)
        ms_sum = ms_sum + np.maximum(support_many(W, eye @ A_s), support_many(W, -eye @ A_s))
    logger.debug("mRPI: s=%d alpha=%.3e", s, alpha)

    if not alpha < 1.0:
        return MrpiResult(Z=None, alpha=alpha, s=s, inflation=0.0, certified=False)

    G = np.hstack([P @ W.generators for P in powers[:s]]) / (1.0 - alpha)
    Z = zonotope(np.zeros(n), G, max_generators=max_generators)
    exact = np.abs(Z.normals @ G).sum(axis=1)
    if np.any(exact < Z.offsets - SET_TOL):
        # Girard 축약이 느슨해졌으면 법선만 template 으로 쓰고 offset 은 축약 전 합의 support
        Z = hpoly(Z.normals, exact, check=False)
    Z, delta, ok = _certify_rpi(A_K, Z, W)
    return MrpiResult(Z=Z if ok else None, alpha=alpha, s=s, inflation=delta, certified=ok)


def rpi_margin(A_K: np.ndarray, Z: HPolytope, W: HPolytope) -> float:
    """
    min over Z facets of h_Z(n) − h_Z(A_Kᵀ n) − h_W(n)  (>= 0 이면 A_K Z ⊕ W ⊆ Z)
    """
    if Z.n_facets == 0:
        return 0.0
    h_z = support_many(Z, Z.normals)
    h_az = support_many(Z, Z.normals @ A_K)
    h_w = support_many(W, Z.normals)
    return float(np.min(h_z - h_az - h_w))


def tighten_constraints(
    model: SubsystemModel,
    Z: HPolytope,
    K: np.ndarray,
    bounds: MatchedBounds,
) -> Tuple[Optional[HPolytope], Optional[HPolytope]]:
    """
    X̂ = X ⊖ Z (measured feedback이면 X ⊖ (Z ⊕ O)),
    V = {v : G (H ⊕ v ⊕ Uz) ⊆ U} 를 interval 연산으로 만든 box

    Returns:
        (Xhat, V). 공집합이면 해당 자리가 None
    """
    tube = minkowski_sum(Z, model.O) if model.feedback == "measured" else Z
    Xhat = pontryagin_diff(model.X, tube)

    Uz = linear_image_box(Z, K)
    uz_mag = np.abs(Uz.center) + Uz.half_widths
    radius = _inner_box_radius(model.U)
    g_max = bounds.G.magnitude
    v_half = radius / g_max - bounds.h_magnitude - uz_mag
    V = box(np.zeros(model.m), v_half) if np.all(v_half > 0) else None
    return Xhat, V


def terminal_ingredients(
    A: np.ndarray,
    B: np.ndarray,
    K: np.ndarray,
    P: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    Xhat: HPolytope,
    V: HPolytope,
    *,
    Qf_gain: Optional[np.ndarray] = None,
    Rf_gain: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, Optional[HPolytope], float]:
    """
    종단 이득 K_f, 종단 비용 P, 종단 집합 X̂_f, V_f sublevel 크기

    X̂_f = x̂⁺ = (A + B K_f) x̂ 의 {x̂ ∈ X̂ : K_f x̂ ∈ V} 안 최대 허용 불변 집합

    Returns:
        (K_f, P, Xf 또는 None, terminal_level)
    """
    if Qf_gain is not None and Rf_gain is not None:
        K_f, _ = lqr_gain(A, B, Qf_gain, Rf_gain)
        A_f = A + B @ K_f
        P = solve_discrete_lyapunov(A_f.T, Q + K_f.T @ R @ K_f)
    else:
        K_f = K
        A_f = A + B @ K_f

    F = np.vstack([Xhat.normals, V.normals @ K_f])
    g = np.concatenate([Xhat.offsets, V.offsets])
    Xf = maximal_admissible_set(A_f, F, g)
    level = terminal_level(P, F, g)
    return K_f, P, Xf, level


def terminal_level(P: np.ndarray, F: np.ndarray, g: np.ndarray, *, iterations: int = 60) -> float:
    """
    {x : xᵀPx <= c} ⊆ {F x <= g} 인 최대 c (bisection)

    ellipsoid support: max_{xᵀPx<=c} fᵀx = √(c · fᵀP⁻¹f)
    """
    P_inv = np.linalg.inv(P)
    quad = np.einsum("ij,jk,ik->i", F, P_inv, F)

    def fits(c: float) -> bool:
        return bool(np.all(np.sqrt(c * quad) <= g + SET_TOL))

    lo, hi = 0.0, 1.0
    while fits(hi):
        lo, hi = hi, hi * 2.0
        if hi > 1e12:
            return lo
    for _ in range(iterations):
        mid = (lo + hi) / 2.0
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo


def ellipsoid_inside(P: np.ndarray, level: float, p: HPolytope) -> bool:
    P_inv = np.linalg.inv(P)
    quad = np.einsum("ij,jk,ik->i", p.normals, P_inv, p.normals)
    return bool(np.all(np.sqrt(level * quad) <= p.offsets + 1e-7))


# -----------------------------
# Public API
# -----------------------------
def design_controller(
    model: SubsystemModel,
    parent_sets: Mapping[int, HPolytope],
    *,
    config: Optional[DesignOptions] = None,
) -> DesignResult:
    """
    서브시스템 하나의 tube 제어기 설계

    Args:
        model: 서브시스템 모델
        parent_sets: parent id → 상태 제약 집합
        config: 설계 옵션

    Returns:
        TubeController 또는 실패 단계를 담은 InfeasibleDesign

    Raises:
        NumericalFault: Riccati / LP 수치 실패
        InvertibilityFault: 정합 이득 g가 샘플에서 0
    """
    cfg = config or DesignOptions()
    if cfg.backend != "lqr_mrpi":
        raise NotImplementedError(f"Unsupported design backend: {cfg.backend}")

    W = coupling_set(model, parent_sets, config=cfg)
    bounds = cfg.matched_bounds or estimate_matched_bounds(
        model,
        parent_sets=parent_sets,
        n_samples=cfg.n_samples,
        inflation=cfg.sample_inflation,
        seed=cfg.seed,
    )
    return _synthesize(model, W, bounds, cfg)


def revalidate(controller: TubeController, new_W: HPolytope) -> RevalidationReport:
    """
    축소된 결합 외란 new_W 아래에서 기존 튜브가 여전히 유효한지 확인

    - new_W ⊆ W
    - A_K Z ⊕ new_W ⊕ margin ⊆ Z (facet 단위)
    """
    if not contains(controller.W, new_W):
        return RevalidationReport(ok=False, reason="new coupling set is not contained in W", margin=-math.inf)
    margin = rpi_margin(controller.A_cl, controller.Z, minkowski_sum(new_W, controller.disturbance_margin))
    if margin < -SET_TOL:
        return RevalidationReport(ok=False, reason="tube is no longer robust positively invariant", margin=margin)
    return RevalidationReport(ok=True, reason="", margin=margin)


def retighten(
    controller: TubeController,
    model: SubsystemModel,
    new_W: HPolytope,
    *,
    config: Optional[DesignOptions] = None,
) -> DesignResult:
    """
    축소된 new_W로 Step IV ~ V 재실행 (정합 범위는 기존 값 재사용)
    """
    cfg = config or DesignOptions()
    return _synthesize(model, new_W, controller.matched, cfg)


def certify(controller: TubeController, model: SubsystemModel) -> Dict[str, bool]:
    """
    설계 결과의 포함 관계를 독립적으로 다시 확인 (interval 평가)
    """
    n = model.n
    tube = minkowski_sum(controller.Z, model.O) if controller.feedback == "measured" else controller.Z
    u_reach = controller.matched.G.magnitude * (
        controller.matched.h_magnitude
        + controller.V.half_widths
        + np.abs(controller.Uz.center)
        + controller.Uz.half_widths
    )
    A_f = model.A + model.B @ controller.K_f
    closed = support_many(controller.Xf, controller.Xf.normals @ A_f)
    w_omega = minkowski_sum(controller.W, box(np.zeros(n), controller.omega))
    return {
        "xhat_tube_in_x": contains(model.X, minkowski_sum(controller.Xhat, tube)),
        "input_in_u": bool(np.all(u_reach <= _inner_box_radius(model.U) + 1e-9)),
        "xf_in_xhat": contains(controller.Xhat, controller.Xf),
        "xf_invariant": bool(np.all(closed <= controller.Xf.offsets + 1e-7)),
        "terminal_input_in_v": contains(controller.V, linear_image_box(controller.Xf, controller.K_f)),
        "zbar0_bounds": contains(controller.Zbar0, w_omega) and contains(model.X, controller.Zbar0),
        "tube_rpi": rpi_margin(controller.A_cl, controller.Z, controller.W_total) >= -SET_TOL,
        "level_in_xf": ellipsoid_inside(controller.P, controller.terminal_level, controller.Xf),
    }


def design_network(
    net: Network,
    *,
    options: Union[DesignOptions, Mapping[int, DesignOptions], None] = None,
    workers: int = DESIGN_WORKERS,
) -> Dict[int, DesignResult]:
    """
    활성 서브시스템 전체 설계

    parent→child로 X_j 한 번 교환한 뒤 서브시스템별 설계는 독립.
    결과는 id 순서로 정렬 (worker 수와 무관).
    """
    ids = sorted(net.active)

    def opts_for(i: int) -> DesignOptions:
        if options is None:
            return DesignOptions()
        if isinstance(options, DesignOptions):
            return options
        return options.get(i) or DesignOptions()

    def run(i: int) -> DesignResult:
        model = net.model(i)
        opts = opts_for(i)
        parent_sets = network_parent_sets(net, i)
        validate_model(model, parent_sets=parent_sets, n_samples=opts.n_samples, seed=opts.seed)
        result = design_controller(model, parent_sets, config=opts)
        if isinstance(result, InfeasibleDesign):
            log_action(
                message=f"design infeasible at step {result.step}: {result.reason}",
                subsystem=i,
                action="design_infeasible",
            )
        else:
            log_action(
                message=f"designed (s={result.mrpi_s}, alpha={result.mrpi_alpha:.2e})",
                subsystem=i,
                action="design",
            )
        return result

    if workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, ids))
    else:
        results = [run(i) for i in ids]
    return dict(zip(ids, results))


def network_parent_sets(net: Network, i: int) -> Dict[int, HPolytope]:
    """
    parent j → X_j (분리된 parent는 원점 한 점)
    """
    return {
        j: net.model(j).X if net.is_active(j) else point(net.model(j).n)
        for j in net.parents(i)
    }


def noise_image(model: SubsystemModel) -> HPolytope:
    """
    measured feedback의 추가 외란 box: |A| ρ̄ + ρ̄
    """
    if model.feedback != "measured":
        return point(model.n)
    rho = model.O.half_widths
    return box(np.zeros(model.n), np.abs(model.A) @ rho + rho)


# -----------------------------
# Internal Helpers
# -----------------------------
def _synthesize(
    model: SubsystemModel,
    W: HPolytope,
    bounds: MatchedBounds,
    cfg: DesignOptions,
) -> DesignResult:
    n, m = model.n, model.m
    i = model.id
    Q = np.eye(n) if cfg.Q is None else np.atleast_2d(np.asarray(cfg.Q, dtype=float))
    R = np.eye(m) if cfg.R is None else np.atleast_2d(np.asarray(cfg.R, dtype=float))

    # Step III
    margin = minkowski_sum(noise_image(model), box(np.zeros(n), cfg.omega))
    W_omega = minkowski_sum(W, margin)
    Zbar0 = scale(W_omega, 1.0 + cfg.zbar_inflation)
    if not contains(model.X, Zbar0):
        return InfeasibleDesign(subsystem=i, step="III", reason="Zbar0 is not contained in X")

    # Step IV
    K, P = lqr_gain(model.A, model.B, Q, R)
    A_K = model.A + model.B @ K
    W_eff = minkowski_sum(W, noise_image(model))
    disturbance = W_omega if np.any(W_eff.half_widths > 0) else W_eff
    result = mrpi(A_K, disturbance, eps_rel=cfg.mrpi_eps, max_s=cfg.mrpi_max_s, max_generators=cfg.max_generators)
    if not result.certified or result.Z is None:
        return InfeasibleDesign(
            subsystem=i,
            step="IV",
            reason="tube cross-section could not be certified invariant",
            details={"alpha": result.alpha, "s": result.s},
        )
    Z = result.Z
    tube = minkowski_sum(Z, model.O) if model.feedback == "measured" else Z
    if not contains(model.X, tube):
        return InfeasibleDesign(subsystem=i, step="IV", reason="tube cross-section is not contained in X")

    # Step V
    Xhat, V = tighten_constraints(model, Z, K, bounds)
    if Xhat is None:
        return InfeasibleDesign(subsystem=i, step="V", reason="tightened state set is empty")
    if V is None:
        return InfeasibleDesign(subsystem=i, step="V", reason="tightened input set is empty")
    if np.any(Xhat.offsets <= 0):
        return InfeasibleDesign(subsystem=i, step="V", reason="tightened state set does not contain the origin")

    K_f, P_f, Xf, level = terminal_ingredients(
        model.A, model.B, K, P, Q, R, Xhat, V,
        Qf_gain=None if cfg.Qf_gain is None else np.atleast_2d(np.asarray(cfg.Qf_gain, dtype=float)),
        Rf_gain=None if cfg.Rf_gain is None else np.atleast_2d(np.asarray(cfg.Rf_gain, dtype=float)),
    )
    if Xf is None:
        return InfeasibleDesign(subsystem=i, step="V", reason="terminal set is not finitely determined")
    if not ellipsoid_inside(P_f, level, Xf):
        return InfeasibleDesign(subsystem=i, step="V", reason="terminal sublevel set leaves Xf")

    return TubeController(
        id=i,
        K=K,
        Z=Z,
        Uz=linear_image_box(Z, K),
        Xhat=Xhat,
        V=V,
        Xf=Xf,
        Q=Q,
        R=R,
        P=P_f,
        N=int(cfg.N),
        W=W,
        Zbar0=Zbar0,
        omega=float(cfg.omega),
        K_f=K_f,
        A_cl=A_K,
        disturbance_margin=margin,
        matched=bounds,
        feedback=model.feedback,
        terminal_level=level,
        mrpi_alpha=result.alpha,
        mrpi_s=result.s,
        mrpi_inflation=result.inflation,
        sample_inflation=cfg.sample_inflation,
    )


def _certify_rpi(A_K: np.ndarray, Z: HPolytope, W: HPolytope, *, rounds: int = 12) -> Tuple[HPolytope, float, bool]:
    """
    facet 단위 RPI 확인. Z = {x : n_jᵀx <= c_j} 에 대해 a_j = h_Z(A_Kᵀn_j), w_j = h_W(n_j).

    - 위반 facet 이 모두 c − a > 0 이면 Z를 (1 + δ)배, δ >= (a + w − c) / (c − a)
    - 아니면 법선을 고정하고 c ← max(c, a + w) (template 위의 Z ← A_K Z ⊕ W 한 번)

    Returns:
        (Z, 처음 offset 대비 최대 증가율, 인증 여부)
    """
    start = np.asarray(Z.offsets, dtype=float).copy()
    for _ in range(rounds):
        c = np.asarray(Z.offsets, dtype=float)
        a = support_many(Z, Z.normals @ A_K)
        w = support_many(W, Z.normals)
        violation = a + w - c
        if np.all(violation <= SET_TOL):
            return Z, _growth(start, c), True
        bad = violation > SET_TOL
        gap = c[bad] - a[bad]
        if np.all(gap > 0):
            delta = float(np.max(violation[bad] / gap)) * (1.0 + 1e-6) + 1e-12
            Z = scale(Z, 1.0 + delta)
        else:
            logger.debug("mRPI: %d facets expand under A_K, template step", int(np.sum(gap <= 0)))
            Z = hpoly(Z.normals, np.maximum(c, a + w), check=False)
    return Z, _growth(start, Z.offsets), rpi_margin(A_K, Z, W) >= -SET_TOL


def _growth(start: np.ndarray, offsets: np.ndarray) -> float:
    live = start > SET_TOL
    if not np.any(live):
        return 0.0
    return max(float(np.max(np.asarray(offsets)[live] / start[live])) - 1.0, 0.0)


def _inner_box_radius(U: HPolytope) -> np.ndarray:
    """
    원점 중심 box {|u_c| <= r_c} ⊆ U
    """
    if U.kind == "box":
        hi = U.center + U.half_widths
        lo = U.center - U.half_widths
        return np.minimum(hi, -lo)
    l1 = np.abs(U.normals).sum(axis=1)
    r = float(np.min(U.offsets / np.where(l1 > 0, l1, np.inf)))
    return np.full(U.dim, r)
