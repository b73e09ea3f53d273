# pnpdm/app/pipeline/mpc.py
"""
MPC Stage (online tube MPC per subsystem)

역할:
- 문제 P_i^N 을 (x̂(0), v(0:N−1)) 위의 condensed QP로 구성 / 캐시
- 최적해 추출 → 합성 제어 법칙 u = g⁻¹[h + v(0) + K(x − x̂(0))]
- plug-in 시 초기 상태의 가능 영역 판정

현재 구현:
- 결정 변수와 제약은 편차 좌표 (x − x_s, v − u_s). shift()가 평형점을 바꾸면
  상수항과 종단 집합을 다시 계산한다.
- warm start: 이전 해를 한 칸 민 값 [x̂(1), v(1..N−1), K_f x̂(N)]

주의:
- 결정 변수 차원이 작아(n <= 4, N <= 20) 밀집 행렬로 충분하다.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional

import numpy as np

from app.core.config import INVERTIBILITY_TOL
from app.core.errors import CertificateViolation, InvertibilityFault
from app.core.guards import require_finite
from app.pipeline.design import TubeController
from app.pipeline.network import SubsystemModel
from app.services.polytope_service import HPolytope, contains_point, maximal_admissible_set
from app.services.qp_service import QpOptions, is_feasible, solve_qp


logger = logging.getLogger(__name__)

MpcStatus = Literal["optimal", "infeasible", "fallback"]


@dataclass
class MpcSolution:
    status: MpcStatus
    xhat0: Optional[np.ndarray]  # x̂(0|t), 절대 좌표
    v_seq: Optional[np.ndarray]  # (N, m), 절대 좌표
    cost: float
    iterations: int = 0
    kkt_residual: float = 0.0
    xhat_seq: Optional[np.ndarray] = None  # (N+1, n) 예측 명목 상태

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "xhat0": None if self.xhat0 is None else self.xhat0.tolist(),
            "v_seq": None if self.v_seq is None else self.v_seq.tolist(),
            "cost": self.cost,
            "iterations": self.iterations,
            "kkt_residual": self.kkt_residual,
        }


@dataclass
class MpcProblem:
    controller: TubeController
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    phi: List[np.ndarray]  # ξ → x̂_k (k = 0..N)
    x_s: np.ndarray
    u_s: np.ndarray
    static_A: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    static_b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Xf_dev: Optional[HPolytope] = None
    previous: Optional[np.ndarray] = None  # 이전 최적 ξ (편차 좌표)
    options: QpOptions = field(default_factory=QpOptions)

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def m(self) -> int:
        return int(self.B.shape[1])

    @property
    def N(self) -> int:
        return int(self.controller.N)

    @property
    def dim(self) -> int:
        return self.n + self.N * self.m

    def shift(self, x_s: np.ndarray, u_s: np.ndarray) -> None:
        """
        평형점 (x_s, u_s) 로 좌표 이동. 이동된 제약으로 종단 집합을 다시 만든다.
        """
        self.x_s = np.asarray(x_s, dtype=float).copy()
        self.u_s = np.atleast_1d(np.asarray(u_s, dtype=float)).copy()
        self._rebuild_constraints()
        self.previous = None

    def warm_start(self) -> Optional[np.ndarray]:
        """
        이전 해를 한 칸 민 후보 [x̂(1), v(1..N−1), K_f x̂(N)]
        """
        if self.previous is None:
            return None
        n, m, N = self.n, self.m, self.N
        xi = self.previous
        x1 = self.phi[1] @ xi
        xN = self.phi[N] @ xi
        v = xi[n:].reshape(N, m)
        v_next = np.vstack([v[1:], (self.controller.K_f @ xN)[None, :]])
        return np.concatenate([x1, v_next.ravel()])

    def _rebuild_constraints(self) -> None:
        ctrl = self.controller
        n, m, N = self.n, self.m, self.N
        rows: List[np.ndarray] = []
        rhs: List[np.ndarray] = []

        F_x, g_x = ctrl.Xhat.normals, ctrl.Xhat.offsets - ctrl.Xhat.normals @ self.x_s
        for k in range(N):
            rows.append(F_x @ self.phi[k])
            rhs.append(g_x)

        F_v, g_v = ctrl.V.normals, ctrl.V.offsets - ctrl.V.normals @ self.u_s
        for k in range(N):
            sel = np.zeros((m, self.dim))
            sel[:, n + k * m : n + (k + 1) * m] = np.eye(m)
            rows.append(F_v @ sel)
            rhs.append(g_v)

        self.Xf_dev = _terminal_set(ctrl, self.A, self.B, g_x, g_v)
        if self.Xf_dev is not None:
            rows.append(self.Xf_dev.normals @ self.phi[N])
            rhs.append(self.Xf_dev.offsets)
        else:
            logger.debug("terminal set empty after shift to x_s=%s", self.x_s)

        self.static_A = np.vstack(rows)
        self.static_b = np.concatenate(rhs)


# -----------------------------
# Public API
# -----------------------------
def build_problem(
    controller: TubeController,
    model: SubsystemModel,
    *,
    config: Optional[QpOptions] = None,
) -> MpcProblem:
    """
    condensed QP 캐시 구성

    Args:
        controller: 설계된 tube 제어기
        model: 같은 서브시스템의 모델 (A, B)
        config: QP 옵션

    Returns:
        원점 평형점 기준 MpcProblem
    """
    A, B = model.A, model.B
    n, m, N = A.shape[0], B.shape[1], controller.N
    dim = n + N * m

    phi: List[np.ndarray] = []
    current = np.hstack([np.eye(n), np.zeros((n, N * m))])
    phi.append(current)
    for k in range(N):
        sel = np.zeros((m, dim))
        sel[:, n + k * m : n + (k + 1) * m] = np.eye(m)
        current = A @ current + B @ sel
        phi.append(current)

    H = np.zeros((dim, dim))
    for k in range(N):
        sel = np.zeros((m, dim))
        sel[:, n + k * m : n + (k + 1) * m] = np.eye(m)
        H += phi[k].T @ controller.Q @ phi[k] + sel.T @ controller.R @ sel
    H += phi[N].T @ controller.P @ phi[N]
    # solve_qp 는 ½ξᵀHξ 를 최소화하므로 Σ ξᵀ(·)ξ 의 Hessian 은 H + Hᵀ
    H = H + H.T

    problem = MpcProblem(
        controller=controller,
        A=A,
        B=B,
        H=H,
        phi=phi,
        x_s=np.zeros(n),
        u_s=np.zeros(m),
        options=config or QpOptions(),
    )
    problem._rebuild_constraints()
    return problem


def solve_mpc(p: MpcProblem, x: np.ndarray, *, remember: bool = True) -> MpcSolution:
    """
    P_i^N 풀이

    Args:
        p: 문제 캐시
        x: 현재 피드백 상태 (절대 좌표)
        remember: True면 최적해를 다음 warm start로 저장

    Returns:
        MpcSolution (infeasible은 상태값)

    Raises:
        SolverIterationLimit: active-set 반복 상한
        NumericalFault: 비유한 입력 / KKT 잔차 초과
    """
    x = require_finite("MPC state", x)
    if p.Xf_dev is None:
        return MpcSolution(status="infeasible", xhat0=None, v_seq=None, cost=float("nan"))

    A_ineq, b_ineq = _stacked_constraints(p, x)
    candidates = [c for c in (p.warm_start(), np.zeros(p.dim)) if c is not None]
    result = solve_qp(H=p.H, f=np.zeros(p.dim), A=A_ineq, b=b_ineq, warm_starts=candidates, config=p.options)
    if result.status != "optimal" or result.x is None:
        return MpcSolution(status="infeasible", xhat0=None, v_seq=None, cost=float("nan"))

    xi = result.x
    if remember:
        p.previous = xi.copy()
    return _solution_from(p, xi, status="optimal", iterations=result.iterations, kkt=result.kkt_residual)


def fallback_solution(p: MpcProblem) -> Optional[MpcSolution]:
    """
    이전 최적해의 꼬리 (infeasible 단계에서 사용). 이전 해가 없으면 None.
    """
    xi = p.warm_start()
    if xi is None:
        return None
    p.previous = xi.copy()
    return _solution_from(p, xi, status="fallback", iterations=0, kkt=0.0)


def control_law(
    p: MpcProblem,
    model: SubsystemModel,
    x: np.ndarray,
    psi: np.ndarray,
    sol: MpcSolution,
) -> np.ndarray:
    """
    u = g(x,ψ)⁻¹ [h(x,ψ) + v(0|t) + K(x − x̂(0|t))]

    Raises:
        InvertibilityFault: |g| < 1e-9
        CertificateViolation: u ∉ U (축소 제약이 이를 보장해야 함)
    """
    if sol.xhat0 is None or sol.v_seq is None:
        raise ValueError("control_law requires a solution with a nominal plan")
    ctrl = p.controller
    gain = float(model.g(x, psi))
    if abs(gain) < INVERTIBILITY_TOL:
        raise InvertibilityFault(f"subsystem {model.id}: g(x, psi) = {gain:.3e}")
    h = np.atleast_1d(np.asarray(model.h(x, psi), dtype=float))
    u = (h + sol.v_seq[0] + ctrl.K @ (x - sol.xhat0)) / gain
    if not contains_point(model.U, u, tol=1e-7):
        raise CertificateViolation(
            f"subsystem {model.id}: input {u} outside U",
            report={"subsystem": model.id, "u": u.tolist(), "x": np.asarray(x).tolist(), "status": sol.status},
        )
    return u


def feasible_region_probe(p: MpcProblem, x: np.ndarray) -> bool:
    """
    x ∈ X^N (P_i^N 가능) 여부. QP 를 풀지 않고 제약 집합의 LP 가능성만 본다.
    """
    x = require_finite("MPC state", x)
    if p.Xf_dev is None:
        return False
    A_ineq, b_ineq = _stacked_constraints(p, x)
    return is_feasible(A=A_ineq, b=b_ineq, config=p.options)


def solution_checks(p: MpcProblem, x: np.ndarray, sol: MpcSolution, tol: float = 1e-7) -> Dict[str, bool]:
    """
    저장된 해에서 튜브 / 상태 / 종단 제약을 다시 확인
    """
    ctrl = p.controller
    checks = {"tube": contains_point(ctrl.Z, np.asarray(x) - sol.xhat0, tol=tol)}
    checks["states"] = all(contains_point(ctrl.Xhat, xk, tol=tol) for xk in sol.xhat_seq[:-1])
    checks["inputs"] = all(contains_point(ctrl.V, vk, tol=tol) for vk in sol.v_seq)
    checks["terminal"] = p.Xf_dev is not None and contains_point(p.Xf_dev, sol.xhat_seq[-1] - p.x_s, tol=tol)
    return checks


# -----------------------------
# Internal Helpers
# -----------------------------
def _solution_from(p: MpcProblem, xi: np.ndarray, *, status: MpcStatus, iterations: int, kkt: float) -> MpcSolution:
    n, m, N = p.n, p.m, p.N
    xhat_seq = np.vstack([p.phi[k] @ xi for k in range(N + 1)]) + p.x_s[None, :]
    v_seq = xi[n:].reshape(N, m) + p.u_s[None, :]
    return MpcSolution(
        status=status,
        xhat0=xhat_seq[0].copy(),
        v_seq=v_seq,
        cost=float(0.5 * xi @ p.H @ xi),
        iterations=iterations,
        kkt_residual=kkt,
        xhat_seq=xhat_seq,
    )


def _terminal_set(
    ctrl: TubeController,
    A: np.ndarray,
    B: np.ndarray,
    g_x: np.ndarray,
    g_v: np.ndarray,
) -> Optional[HPolytope]:
    if np.allclose(g_x, ctrl.Xhat.offsets) and np.allclose(g_v, ctrl.V.offsets):
        return ctrl.Xf
    A_f = A + B @ ctrl.K_f
    F = np.vstack([ctrl.Xhat.normals, ctrl.V.normals @ ctrl.K_f])
    g = np.concatenate([g_x, g_v])
    return maximal_admissible_set(A_f, F, g)


def _stacked_constraints(p: MpcProblem, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ctrl = p.controller
    x_dev = x - p.x_s
    # x − x̂(0) ∈ Z  ⇔  −F_Z x̂(0) <= g_Z − F_Z x_dev
    tube_rows = np.hstack([-ctrl.Z.normals, np.zeros((ctrl.Z.n_facets, p.N * p.m))])
    tube_rhs = ctrl.Z.offsets - ctrl.Z.normals @ x_dev
    return np.vstack([tube_rows, p.static_A]), np.concatenate([tube_rhs, p.static_b])
