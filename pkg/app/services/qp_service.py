# pnpdm/app/services/qp_service.py
"""
QP Service (dense primal active-set)

역할:
- min ½ xᵀHx + fᵀx  s.t.  A x <= b  (H ≻ 0) 를 작은 밀집 문제로 푼다.
- 결정적(pivot / tie-breaking 고정) → 같은 입력이면 같은 비트의 해

현재 구현:
- Phase 1: 후보 warm start(0 벡터, 이동된 이전 해)가 가능해면 그대로 쓰고,
  아니면 scipy linprog(HiGHS)로 여유(slack) 최대화 LP를 풀어 내부점을 얻는다.
- Phase 2: KKT 블록 시스템(np.block)을 푸는 primal active-set 반복.
  working set 은 항상 선형 독립, 퇴화 꼭짓점에서는 작은 번호 우선(Bland).

주의:
- infeasible은 예외가 아니라 상태값이다.
- 반복 상한 도달은 SolverIterationLimit (infeasible과 구분).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Literal, Optional

import numpy as np
from scipy.optimize import linprog

from app.core.config import FEAS_TOL, KKT_TOL, QP_MAX_ITER
from app.core.errors import DimensionMismatch, NumericalFault, SolverIterationLimit


logger = logging.getLogger(__name__)

Backend = Literal["active_set"]
QpStatus = Literal["optimal", "infeasible"]


@dataclass
class QpOptions:
    backend: Backend = "active_set"
    max_iter: int = QP_MAX_ITER
    kkt_tol: float = KKT_TOL
    feas_tol: float = FEAS_TOL
    step_tol: float = 1e-10  # ‖p‖ 정지 기준 (상대)
    rate_tol: float = 1e-9  # a_i·p > rate_tol‖a_i‖‖p‖ 인 제약만 막는다


@dataclass
class QpResult:
    status: QpStatus
    x: Optional[np.ndarray]
    objective: float
    iterations: int
    kkt_residual: float
    active_set: tuple[int, ...] = ()


# -----------------------------
# Public API
# -----------------------------
def solve_qp(
    *,
    H: np.ndarray,
    f: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    warm_starts: Iterable[np.ndarray] = (),
    config: Optional[QpOptions] = None,
) -> QpResult:
    """
    강볼록 QP 풀이

    Args:
        H: (n, n) 양의 정부호 Hessian
        f: (n,) 선형항
        A, b: 부등식 제약 A x <= b
        warm_starts: 가능해 후보 (앞에서부터 시도)
        config: 풀이 옵션

    Returns:
        QpResult

    Raises:
        SolverIterationLimit: 반복 상한 도달
        NumericalFault: LP 실패 또는 KKT 잔차가 허용치를 넘음
    """
    cfg = config or QpOptions()
    if cfg.backend != "active_set":
        raise NotImplementedError(f"Unsupported QP backend: {cfg.backend}")

    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float).ravel()
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    n = H.shape[0]
    if H.shape != (n, n) or f.size != n or A.shape[1] != n or A.shape[0] != b.size:
        raise DimensionMismatch(
            f"QP dimensions: H{H.shape}, f({f.size}), A{A.shape}, b({b.size})"
        )

    x0 = _initial_point(A, b, warm_starts, cfg)
    if x0 is None:
        return QpResult(status="infeasible", x=None, objective=float("nan"), iterations=0, kkt_residual=float("nan"))

    x, working, mu, iterations = _active_set(H, f, A, b, x0, cfg)
    residual = kkt_residual(H, f, A, b, x, working, mu)
    if residual > cfg.kkt_tol:
        raise NumericalFault(f"QP KKT residual {residual:.3e} exceeds {cfg.kkt_tol:.1e}")
    objective = float(0.5 * x @ H @ x + f @ x)
    return QpResult(
        status="optimal",
        x=x,
        objective=objective,
        iterations=iterations,
        kkt_residual=residual,
        active_set=tuple(working),
    )


def is_feasible(*, A: np.ndarray, b: np.ndarray, config: Optional[QpOptions] = None) -> bool:
    """
    {x : A x <= b} 가 비었는지 phase-1 LP 로만 판정 (QP 반복 없음)
    """
    cfg = config or QpOptions()
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[0] != b.size:
        raise DimensionMismatch(f"feasibility dimensions: A{A.shape}, b({b.size})")
    return _max_slack_point(A, b, cfg) is not None


def kkt_residual(
    H: np.ndarray,
    f: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    working: list[int],
    mu: np.ndarray,
) -> float:
    """
    max(정류성, 원문제 가능성, 쌍대 가능성, 상보성) 무한대 노름
    """
    full_mu = np.zeros(A.shape[0])
    if working:
        full_mu[working] = mu
    slack = A @ x - b
    stationarity = np.abs(H @ x + f + A.T @ full_mu).max(initial=0.0)
    primal = np.maximum(slack, 0.0).max(initial=0.0)
    dual = np.maximum(-full_mu, 0.0).max(initial=0.0)
    complementarity = np.abs(full_mu * slack).max(initial=0.0)
    return float(max(stationarity, primal, dual, complementarity))


# -----------------------------
# Phase 1
# -----------------------------
def _initial_point(
    A: np.ndarray,
    b: np.ndarray,
    warm_starts: Iterable[np.ndarray],
    cfg: QpOptions,
) -> Optional[np.ndarray]:
    for candidate in warm_starts:
        if candidate is None:
            continue
        candidate = np.asarray(candidate, dtype=float).ravel()
        if candidate.size == A.shape[1] and np.all(A @ candidate <= b + cfg.feas_tol):
            return candidate.copy()
    return _max_slack_point(A, b, cfg)


def _max_slack_point(A: np.ndarray, b: np.ndarray, cfg: QpOptions) -> Optional[np.ndarray]:
    """
    max s  s.t.  A x + s‖a_i‖ <= b,  s <= 1
    s* < -feas_tol 이면 공집합.
    """
    m, n = A.shape
    norms = np.linalg.norm(A, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, norms[:, None]])
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * n + [(None, 1.0)], method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise NumericalFault(f"QP phase-1 LP failed: {res.message}")
    s = float(res.x[-1])
    if s < -cfg.feas_tol:
        return None
    return np.asarray(res.x[:n])


# -----------------------------
# Phase 2
# -----------------------------
def _active_set(
    H: np.ndarray,
    f: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    cfg: QpOptions,
) -> tuple[np.ndarray, list[int], np.ndarray, int]:
    n = H.shape[0]
    x = x0.copy()
    scale = 1.0 + np.abs(b)
    row_norms = np.linalg.norm(A, axis=1)
    working = _initial_working_set(A, b, x, scale, cfg)
    # full step 직후 x는 현재 working set 위의 최소점
    stationary = False
    # 퇴화 꼭짓점 위에서는 Bland 규칙 (가장 작은 제약 번호)
    degenerate = False

    for iteration in range(1, cfg.max_iter + 1):
        g = H @ x + f
        p, mu = _solve_eqp(H, g, A[working] if working else np.zeros((0, n)))

        if stationary or np.linalg.norm(p, ord=np.inf) <= cfg.step_tol * (1.0 + np.linalg.norm(x, ord=np.inf)):
            stationary = False
            negative = [k for k in range(len(working)) if mu[k] < -cfg.kkt_tol * 1e-2]
            if not negative:
                return x, working, mu, iteration
            if degenerate:
                drop = min(negative, key=lambda k: working[k])
            else:
                drop = min(negative, key=lambda k: (mu[k], working[k]))
            logger.debug("active-set: drop constraint %d (mu=%.3e)", working[drop], mu[drop])
            working.pop(drop)
            continue

        alpha, blocking = _step_length(A, b, x, p, working, row_norms, cfg)
        x = x + alpha * p
        degenerate = alpha <= cfg.step_tol
        if blocking is None:
            stationary = True
        else:
            working.append(blocking)
            working.sort()

    raise SolverIterationLimit(f"active-set QP did not converge in {cfg.max_iter} iterations")


def _initial_working_set(
    A: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    scale: np.ndarray,
    cfg: QpOptions,
) -> list[int]:
    slack = b - A @ x
    working: list[int] = []
    for idx in np.flatnonzero(slack <= cfg.feas_tol * scale):
        if _independent(A, working, int(idx)):
            working.append(int(idx))
        if len(working) == A.shape[1]:
            break
    return working


def _independent(A: np.ndarray, working: list[int], idx: int) -> bool:
    trial = working + [idx]
    return len(trial) <= A.shape[1] and np.linalg.matrix_rank(A[trial]) == len(trial)


def _solve_eqp(H: np.ndarray, g: np.ndarray, A_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    min ½pᵀHp + gᵀp  s.t.  A_w p = 0  의 KKT 시스템
        [H  A_wᵀ] [p ]   [-g]
        [A_w  0 ] [mu] = [ 0]

    A_w 의 행이 독립이고 H ≻ 0 이면 정칙이다.
    """
    n = H.shape[0]
    k = A_w.shape[0]
    kkt = np.block([[H, A_w.T], [A_w, np.zeros((k, k))]])
    rhs = np.concatenate([-g, np.zeros(k)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalFault(f"singular KKT system with {k} working constraints") from exc
    return sol[:n], sol[n:]


def _step_length(
    A: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    p: np.ndarray,
    working: list[int],
    row_norms: np.ndarray,
    cfg: QpOptions,
) -> tuple[float, Optional[int]]:
    """
    p 방향 최대 보폭과 막는 제약. 동률이면 작은 번호, working 과 종속인 제약은 건너뛴다.
    """
    rates = A @ p
    slack = b - A @ x
    in_working = set(working)
    moving = rates > cfg.rate_tol * row_norms * np.linalg.norm(p)
    candidates = sorted(
        (max(slack[idx], 0.0) / rates[idx], int(idx))
        for idx in np.flatnonzero(moving)
        if int(idx) not in in_working
    )
    for ratio, idx in candidates:
        if ratio >= 1.0:
            break
        if _independent(A, working, idx):
            return ratio, idx
        logger.debug("active-set: skip dependent blocking constraint %d", idx)
    return 1.0, None
