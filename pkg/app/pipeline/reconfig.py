# pnpdm/app/pipeline/reconfig.py
"""
Reconfig Stage (plug-and-play runtime reconfiguration)

역할:
- unplug: 고장 서브시스템 분리 → 자식의 결합 외란 W_i 축소 / 재검증, w̄ 갱신, 공유 변수 retire
- plug_in: 수리된 서브시스템 재연결 → 가능 영역 확인, 자식 설정 복원, 진단 유닛 재시작
- auto_policy: 검출 결과 + 수리 일정 → 재구성 계획
- DwellGuard: 재구성 간 최소 간격 (부족하면 계획을 버리지 않고 미룬다)

주의:
- 재구성은 step 사이에서만 적용된다 (엔진 단일 스레드).
- 영향 범위는 항상 F_j ∪ N_j 안 (벗어나면 ReconfigurationError)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Mapping, MutableMapping, Optional, Sequence, Union

import numpy as np

from app.core.errors import CertificateViolation, PlugInRejected, ReconfigurationError
from app.core.guards import require_positive
from app.core.logging import log_action, log_error
from app.pipeline.design import (
    DesignOptions,
    TubeController,
    coupling_set,
    network_parent_sets,
    retighten as retighten_controller,
    revalidate,
)
from app.pipeline.detect import DetectionDecision, FdUnit, set_parent_active, sync_retired
from app.pipeline.mpc import MpcProblem, build_problem, feasible_region_probe
from app.pipeline.network import Network, NetworkEvent, retired_mask
from app.services.polytope_service import HPolytope


logger = logging.getLogger(__name__)

PlanKind = Literal["unplug", "plug_in"]
PlanStatus = Literal["pending", "applied", "deferred", "rejected"]


# -----------------------------
# Runtime Agents
# -----------------------------
@dataclass
class Agent:
    """
    서브시스템 하나의 런타임 상태 (제어기 + MPC 캐시 + 진단 유닛)
    """

    id: int
    controller: TubeController
    problem: MpcProblem
    unit: FdUnit
    coupling: HPolytope  # 현재 W_i
    version: int = 0  # 제어기 교체 횟수


@dataclass
class AgentPool:
    agents: Dict[int, Agent]
    design_options: Dict[int, DesignOptions] = field(default_factory=dict)
    saved_controllers: Dict[int, TubeController] = field(default_factory=dict)
    saved_couplings: Dict[int, HPolytope] = field(default_factory=dict)

    def __getitem__(self, i: int) -> Agent:
        return self.agents[i]

    @property
    def units(self) -> Dict[int, FdUnit]:
        return {i: a.unit for i, a in self.agents.items()}

    def options_for(self, i: int) -> DesignOptions:
        return self.design_options.get(i) or DesignOptions()

    def replace_controller(self, i: int, controller: TubeController, net: Network) -> None:
        agent = self.agents[i]
        x_s, u_s = agent.problem.x_s, agent.problem.u_s
        agent.controller = controller
        agent.problem = build_problem(controller, net.model(i), config=agent.problem.options)
        if np.any(x_s) or np.any(u_s):
            agent.problem.shift(x_s, u_s)
        agent.version += 1

    def snapshot(self, net: Network) -> Dict[int, Dict[str, Any]]:
        """
        서브시스템별 제어 / 진단 파라미터 지문
        """
        return {
            i: {
                "active": net.is_active(i),
                "W": _rounded(a.coupling),
                "controller_version": a.version,
                **a.unit.snapshot(),
            }
            for i, a in sorted(self.agents.items())
        }


# -----------------------------
# Plans
# -----------------------------
@dataclass
class RepairEntry:
    target: int
    time: int
    init_state: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {"target": self.target, "time": self.time, "init_state": np.asarray(self.init_state).tolist()}


@dataclass
class ReconfigPlan:
    trigger: Union[DetectionDecision, str]  # DetectionDecision | "manual" | "schedule"
    target: int
    kind: PlanKind
    time: int
    affected: List[int] = field(default_factory=list)
    actions: List[str] = field(default_factory=list)
    status: PlanStatus = "pending"
    changed: Dict[int, List[str]] = field(default_factory=dict)
    init_state: Optional[np.ndarray] = None
    reason: str = ""

    def to_dict(self) -> Dict[str, Any]:
        trigger = self.trigger.to_dict() if isinstance(self.trigger, DetectionDecision) else self.trigger
        return {
            "trigger": trigger,
            "target": self.target,
            "kind": self.kind,
            "time": self.time,
            "affected": list(self.affected),
            "actions": list(self.actions),
            "status": self.status,
            "changed": {str(k): v for k, v in self.changed.items()},
            "init_state": None if self.init_state is None else np.asarray(self.init_state).tolist(),
            "reason": self.reason,
        }


class DwellGuard:
    """
    재구성 사이 최소 step 간격
    """

    def __init__(self, min_steps: int = 0) -> None:
        self.min_steps = int(require_positive("dwell time", min_steps, strict=False))
        self.last: Optional[int] = None

    def allow(self, t: int) -> bool:
        return self.last is None or t - self.last >= self.min_steps

    def record(self, t: int) -> None:
        self.last = t


# -----------------------------
# Public API
# -----------------------------
def unplug(
    net: Network,
    pool: AgentPool,
    j: int,
    t: int,
    *,
    trigger: Union[DetectionDecision, str] = "manual",
    retighten: bool = False,
) -> ReconfigPlan:
    """
    서브시스템 j 분리

    Raises:
        ReconfigurationError: j가 이미 비활성 / 영향 범위가 F_j ∪ N_j 를 벗어남
        CertificateViolation: 자식 제어기 재검증 실패
    """
    if not net.is_active(j):
        raise ReconfigurationError(f"cannot unplug inactive subsystem {j}")

    before = pool.snapshot(net)
    plan = ReconfigPlan(trigger=trigger, target=j, kind="unplug", time=t)
    net.deactivate(j)
    plan.actions.append("zero_interconnection")

    children = [i for i in net.children(j) if net.is_active(i)]
    for i in children:
        agent = pool[i]
        new_W = coupling_set(net.model(i), network_parent_sets(net, i), config=pool.options_for(i))
        report = revalidate(agent.controller, new_W)
        if not report.ok:
            log_error(message=f"revalidation failed after unplug of {j}: {report.reason}", subsystem=i, action="certificate_violation")
            raise CertificateViolation(
                f"subsystem {i}: {report.reason}",
                report={"subsystem": i, "unplugged": j, **report.to_dict()},
            )
        pool.saved_couplings.setdefault(i, agent.coupling)
        agent.coupling = new_W
        set_parent_active(agent.unit, j, False)
        plan.actions.append(f"shrink_w_bar:{i}")
        if retighten:
            _retighten_child(net, pool, i, new_W, plan)

    sharers = sorted(net.sharing_partners(j) & net.active)
    for i in sharers:
        unit = pool[i].unit
        sync_retired(unit, retired_mask(net, i), unit.xhat)
        plan.actions.append(f"drop_from_Sk:{i}")

    pool[j].unit.halted = True
    plan.affected = sorted(set(children) | set(sharers))
    _check_locality(net, j, plan.affected)

    plan.changed = _diff(before, pool.snapshot(net))
    plan.status = "applied"
    net.log_event(NetworkEvent(time=t, kind="unplug", target=j, affected=tuple(plan.affected), reason=_reason(trigger)))
    log_action(message=f"unplugged at step {t}, affected={plan.affected}", subsystem=j, action="unplug")
    return plan


def plug_in(
    net: Network,
    pool: AgentPool,
    j: int,
    init_state: np.ndarray,
    t: int,
    *,
    states: Optional[MutableMapping[int, np.ndarray]] = None,
    trigger: Union[DetectionDecision, str] = "schedule",
) -> ReconfigPlan:
    """
    분리됐던 서브시스템 j 재연결

    Raises:
        ReconfigurationError: j가 이미 활성
        PlugInRejected: init_state 에서 MPC 문제가 불가능
    """
    if net.is_active(j):
        raise ReconfigurationError(f"cannot plug in active subsystem {j}")

    x0 = np.asarray(init_state, dtype=float)
    plan = ReconfigPlan(trigger=trigger, target=j, kind="plug_in", time=t, init_state=x0)
    agent = pool[j]
    agent.problem.previous = None
    if not feasible_region_probe(agent.problem, x0):
        plan.status = "rejected"
        plan.reason = "initial state outside the MPC feasible region"
        net.log_event(NetworkEvent(time=t, kind="plug_in_rejected", target=j, reason=plan.reason))
        log_action(message=f"plug-in rejected at {x0.tolist()}", subsystem=j, action="plug_in_rejected")
        raise PlugInRejected(f"subsystem {j}: {plan.reason}", plan=plan)

    before = pool.snapshot(net)
    if states is not None:
        states[j] = x0.copy()
    net.activate(j)

    children = [i for i in net.children(j) if net.is_active(i)]
    for i in children:
        child = pool[i]
        child.coupling = pool.saved_couplings.pop(i, None) or coupling_set(
            net.model(i), network_parent_sets(net, i), config=pool.options_for(i)
        )
        saved = pool.saved_controllers.pop(i, None)
        if saved is not None:
            pool.replace_controller(i, saved, net)
            plan.actions.append(f"restore_controller:{i}")
        set_parent_active(child.unit, j, True)
        plan.actions.append(f"restore_w_bar:{i}")

    sharers = sorted(net.sharing_partners(j) & net.active)
    plan.actions.extend(f"restore_Sk:{i}" for i in sharers)
    plan.actions.append("restart_detector")

    plan.affected = sorted(set(children) | set(sharers))
    _check_locality(net, j, plan.affected)
    plan.changed = _diff(before, pool.snapshot(net))
    plan.status = "applied"
    net.log_event(NetworkEvent(time=t, kind="plug_in", target=j, affected=tuple(plan.affected), reason=_reason(trigger)))
    log_action(message=f"plugged in at step {t} with x0={x0.tolist()}", subsystem=j, action="plug_in")
    return plan


def auto_policy(
    net: Network,
    decisions: Sequence[DetectionDecision],
    repair_schedule: Sequence[RepairEntry],
    t: int,
) -> List[ReconfigPlan]:
    """
    결정적 정책: 검출된 활성 서브시스템은 unplug, 일정된 수리 시점에 plug_in (id 순)
    """
    plans: List[ReconfigPlan] = []
    for d in sorted(decisions, key=lambda d: d.subsystem):
        if d.detected and net.is_active(d.subsystem):
            plans.append(ReconfigPlan(trigger=d, target=d.subsystem, kind="unplug", time=t))
    for entry in sorted(repair_schedule, key=lambda e: e.target):
        if entry.time == t and not net.is_active(entry.target):
            plans.append(
                ReconfigPlan(
                    trigger="schedule",
                    target=entry.target,
                    kind="plug_in",
                    time=t,
                    init_state=np.asarray(entry.init_state, dtype=float),
                )
            )
    return plans


def apply_plan(
    net: Network,
    pool: AgentPool,
    plan: ReconfigPlan,
    t: int,
    *,
    states: Optional[MutableMapping[int, np.ndarray]] = None,
    retighten: bool = False,
) -> ReconfigPlan:
    """
    대기 중 계획 실행 (미뤄졌던 계획은 적용 시점 t로 다시 찍힌다)
    """
    if plan.kind == "unplug":
        if not net.is_active(plan.target):
            plan.status = "rejected"
            plan.reason = "already unplugged"
            return plan
        return unplug(net, pool, plan.target, t, trigger=plan.trigger, retighten=retighten)
    if plan.kind == "plug_in":
        if plan.init_state is None:
            raise ReconfigurationError(f"plug-in plan for {plan.target} has no initial state")
        return plug_in(net, pool, plan.target, plan.init_state, t, states=states, trigger=plan.trigger)
    raise NotImplementedError(f"Unsupported plan kind: {plan.kind}")


# -----------------------------
# Internal Helpers
# -----------------------------
def _retighten_child(net: Network, pool: AgentPool, i: int, new_W: HPolytope, plan: ReconfigPlan) -> None:
    agent = pool[i]
    result = retighten_controller(agent.controller, net.model(i), new_W, config=pool.options_for(i))
    if not isinstance(result, TubeController):
        log_action(message=f"retighten skipped: {result.reason}", subsystem=i, action="retighten")
        return
    pool.saved_controllers.setdefault(i, agent.controller)
    pool.replace_controller(i, result, net)
    plan.actions.append(f"retune_controller:{i}")
    log_action(message="controller retightened with the reduced coupling set", subsystem=i, action="retighten")


def _check_locality(net: Network, j: int, affected: Sequence[int]) -> None:
    allowed = set(net.children(j)) | set(net.parents(j))
    outside = set(affected) - allowed
    logger.debug("locality of %d: affected=%s allowed=%s", j, sorted(affected), sorted(allowed))
    if outside:
        raise ReconfigurationError(f"reconfiguration of {j} reaches beyond F_j ∪ N_j: {sorted(outside)}")


def _diff(before: Mapping[int, Dict[str, Any]], after: Mapping[int, Dict[str, Any]]) -> Dict[int, List[str]]:
    changed: Dict[int, List[str]] = {}
    for i in sorted(after):
        keys = [k for k in after[i] if before.get(i, {}).get(k) != after[i][k]]
        if keys:
            changed[i] = keys
    return changed


def _rounded(p: HPolytope) -> List[float]:
    return [round(float(v), 12) for v in np.concatenate([p.normals.ravel(), p.offsets])]


def _reason(trigger: Union[DetectionDecision, str]) -> str:
    if isinstance(trigger, DetectionDecision):
        return f"fault detected on component {trigger.component} at step {trigger.time}"
    return str(trigger)
