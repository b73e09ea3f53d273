# pnpdm/app/pipeline/engine.py
"""
Engine Stage (closed-loop simulation)

역할:
- 시나리오 번들 + 설계된 제어기 → 동기식 closed-loop 실행
- 한 step 순서:
  1) 측정 y(t)
  2) 검출 (활성 + 멈추지 않은 유닛)
  3) 재구성 계획 (auto_policy + 수리 일정, dwell guard로 미뤄진 계획 포함) 적용
  4) 재구성이 있었으면 다시 측정
  5) 서브시스템별 MPC → 합성 제어 입력
  6) 진단 유닛 합의 round
  7) trace 기록 (비활성 서브시스템 포함, plugged = 측정 시점의 연결 상태)
  8) 플랜트 갱신 (고장 효과 기록)

주의:
- trace에 wall-clock 시간을 넣지 않는다. 같은 번들 + 같은 seed → 같은 trace.
- 재구성은 step 사이에서만 일어난다.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from app.core.errors import CertificateViolation, ConfigError, PlugInRejected, SolverIterationLimit
from app.core.logging import log_action
from app.core.metadata import EventRecord, RunSummary, TraceRecord
from app.pipeline.design import DesignOptions, DesignResult, TubeController, design_network
from app.pipeline.detect import THRESHOLD_PARTS, DetectionDecision, UnitRound, detect, exchange_round, make_unit, restart_unit
from app.pipeline.mpc import MpcSolution, build_problem, control_law, fallback_solution, solve_mpc
from app.pipeline.network import FaultSpec, Network, assemble_psi, measure, retired_mask, state_box, step_plant, theta_bar
from app.pipeline.reconfig import (
    Agent,
    AgentPool,
    DwellGuard,
    ReconfigPlan,
    RepairEntry,
    apply_plan,
    auto_policy,
)
from app.services.noise_service import NoiseSource
from app.services.polytope_service import contains_point
from app.services.qp_service import QpOptions


logger = logging.getLogger(__name__)


# -----------------------------
# Scenario Inputs
# -----------------------------
@dataclass
class SetpointChange:
    time: int
    subsystem: int
    x_s: np.ndarray
    u_s: np.ndarray


@dataclass
class ScenarioBundle:
    """
    시나리오 빌더가 만드는 실행 입력 한 벌
    """

    name: str
    network: Network
    initial_states: Dict[int, np.ndarray]
    design_options: Dict[int, DesignOptions] = field(default_factory=dict)
    faults: List[FaultSpec] = field(default_factory=list)
    repair_schedule: List[RepairEntry] = field(default_factory=list)
    setpoints: List[SetpointChange] = field(default_factory=list)
    lam: float = 0.1
    seed: int = 0
    steps: int = 100
    sample_time: float = 1.0
    unit_samples: int = 400  # Δḡ, Δh̄ 샘플 수 (closed-form이 없을 때)


@dataclass
class EngineOptions:
    retighten: bool = False
    dwell_min: int = 0
    auto_reconfigure: bool = True
    noise_enabled: bool = True
    tube_tol: float = 1e-6
    qp: QpOptions = field(default_factory=QpOptions)
    backend: str = "synchronous"


@dataclass
class SimulationResult:
    rows: List[TraceRecord]
    events: List[EventRecord]
    summary: RunSummary
    plans: List[ReconfigPlan] = field(default_factory=list)
    final_states: Dict[int, np.ndarray] = field(default_factory=dict)


# -----------------------------
# Design Helper
# -----------------------------
def design_bundle(bundle: ScenarioBundle, *, workers: int = 1) -> Dict[int, DesignResult]:
    """
    번들의 활성 서브시스템 전체 설계 (id 순)
    """
    return design_network(bundle.network, options=bundle.design_options, workers=workers)


# -----------------------------
# Engine
# -----------------------------
class ClosedLoopEngine:
    """
    단일 스레드 동기 round 엔진
    """

    def __init__(
        self,
        bundle: ScenarioBundle,
        controllers: Mapping[int, TubeController],
        *,
        config: Optional[EngineOptions] = None,
    ) -> None:
        cfg = config or EngineOptions()
        if cfg.backend != "synchronous":
            raise NotImplementedError(f"Unsupported engine backend: {cfg.backend}")
        missing = [i for i in bundle.network.ids if i not in controllers]
        if missing:
            raise ConfigError(f"no controller for subsystems {missing}")

        self.cfg = cfg
        self.bundle = bundle
        self.net = bundle.network
        self.noise = NoiseSource(seed=bundle.seed, enabled=cfg.noise_enabled)
        self.states: Dict[int, np.ndarray] = {
            i: np.asarray(bundle.initial_states[i], dtype=float).copy() for i in self.net.ids
        }
        self.guard = DwellGuard(cfg.dwell_min)
        self.pending: List[ReconfigPlan] = []
        self.plans: List[ReconfigPlan] = []
        self.rows: List[TraceRecord] = []
        self.events: List[EventRecord] = []
        self.summary = RunSummary(scenario=bundle.name, seed=bundle.seed, steps=0)
        self.pool = self._build_pool(controllers)
        self._apply_setpoints(0)

    # -----------------------------
    # Public API
    # -----------------------------
    def run(self, steps: Optional[int] = None) -> SimulationResult:
        total = self.bundle.steps if steps is None else int(steps)
        if total < 0:
            raise ConfigError(f"steps must be >= 0, got {total}")
        for t in range(total):
            self.step(t)
        self.summary.steps = total
        self.summary.events = len(self.events)
        log_action(
            message=f"simulated {total} steps, detections={self.summary.detections}",
            action="simulate",
        )
        return SimulationResult(
            rows=self.rows,
            events=self.events,
            summary=self.summary,
            plans=self.plans,
            final_states={i: x.copy() for i, x in self.states.items()},
        )

    def step(self, t: int) -> None:
        if t > 0:
            self._apply_setpoints(t)
        y = measure(self.net, self.states, self.noise, t)

        plugged = {i: int(self.net.is_active(i)) for i in self.net.ids}
        decisions = self._detect(y, t)
        applied = self._reconfigure(decisions, t)
        if applied:
            y = measure(self.net, self.states, self.noise, t)
            for plan in applied:
                if plan.kind == "plug_in":
                    restart_unit(self.pool[plan.target].unit, y[plan.target])

        inputs, solutions = self._control(y, t)

        before = {i: (a.unit.xhat.copy(), a.unit.eps_bar.copy()) for i, a in self.pool.agents.items()}
        rounds = exchange_round(self.net, self.pool.units, y, inputs, t)

        effects: Dict[int, np.ndarray] = {}
        next_states = step_plant(self.net, self.states, inputs, self.bundle.faults, t, effects_out=effects)
        self._record(t, y, inputs, solutions, before, rounds, effects, plugged)
        self._check_constraints(next_states, inputs, t)
        self.states = next_states

    # -----------------------------
    # Internal Helpers
    # -----------------------------
    def _build_pool(self, controllers: Mapping[int, TubeController]) -> AgentPool:
        y0 = measure(self.net, self.states, self.noise, 0)
        agents: Dict[int, Agent] = {}
        for i in self.net.ids:
            ctrl = controllers[i]
            diag = self.net.diag(i)
            unit = make_unit(
                diag,
                lam=self.bundle.lam,
                y0=y0[i],
                theta_bar=theta_bar(self.net, i),
                n_samples=self.bundle.unit_samples,
                seed=self.bundle.seed + i,
            )
            agents[i] = Agent(
                id=i,
                controller=ctrl,
                problem=build_problem(ctrl, self.net.model(i), config=self.cfg.qp),
                unit=unit,
                coupling=ctrl.W,
            )
        return AgentPool(agents=agents, design_options=dict(self.bundle.design_options))

    def _apply_setpoints(self, t: int) -> None:
        for change in self.bundle.setpoints:
            if change.time == t:
                self.pool[change.subsystem].problem.shift(change.x_s, change.u_s)

    def _detect(self, y: Mapping[int, np.ndarray], t: int) -> List[DetectionDecision]:
        detected: List[DetectionDecision] = []
        for i in self.net.ids:
            unit = self.pool[i].unit
            if not self.net.is_active(i) or unit.halted:
                continue
            decision = detect(unit, y[i], t=t)
            if not decision.detected:
                continue
            unit.halted = True
            detected.append(decision)
            self.summary.detections.setdefault(i, t)
            self._event(t, "detection", i, reason=f"component {decision.component}: {decision.residual:.4g} > {decision.threshold:.4g}")
            log_action(message=f"fault detected on component {decision.component}", subsystem=i, action="detect")
        return detected

    def _reconfigure(self, decisions: Sequence[DetectionDecision], t: int) -> List[ReconfigPlan]:
        if not self.cfg.auto_reconfigure:
            return []
        fresh = auto_policy(self.net, decisions, self.bundle.repair_schedule, t)
        queued = {(p.kind, p.target) for p in self.pending}
        candidates = self.pending + [p for p in fresh if (p.kind, p.target) not in queued]
        self.pending = []

        applied: List[ReconfigPlan] = []
        for plan in candidates:
            if not self.guard.allow(t):
                if plan.status != "deferred":
                    plan.status = "deferred"
                    self._event(t, "dwell_defer", plan.target, reason=plan.kind)
                    log_action(message=f"{plan.kind} deferred by dwell guard", subsystem=plan.target, action="dwell_defer")
                self.pending.append(plan)
                continue
            try:
                done = apply_plan(self.net, self.pool, plan, t, states=self.states, retighten=self.cfg.retighten)
            except PlugInRejected as exc:
                self.plans.append(exc.plan)
                self._event(t, "plug_in_rejected", plan.target, reason=str(exc))
                continue
            self.plans.append(done)
            if done.status != "applied":
                continue
            self.guard.record(t)
            applied.append(done)
            self._event(t, done.kind, done.target, affected=done.affected, reason=done.reason or _trigger_text(done))
            if done.kind == "unplug":
                self.summary.unplugged.append(done.target)
                self.summary.retuned[done.target] = list(done.affected)
                if done.affected:
                    self._event(t, "retune", done.target, affected=done.affected, reason="coupling bounds shrunk")
                    log_action(message=f"retuned {done.affected}", subsystem=done.target, action="retune")
            else:
                self.summary.replugged.append(done.target)
        return applied

    def _control(
        self,
        y: Mapping[int, np.ndarray],
        t: int,
    ) -> tuple[Dict[int, np.ndarray], Dict[int, Optional[MpcSolution]]]:
        inputs: Dict[int, np.ndarray] = {}
        solutions: Dict[int, Optional[MpcSolution]] = {}
        for i in self.net.ids:
            if not self.net.is_active(i):
                solutions[i] = None
                continue
            agent = self.pool[i]
            model = self.net.model(i)
            fb = self._feedback(i, y)
            psi = assemble_psi(self.net, i, self.states)

            try:
                sol = solve_mpc(agent.problem, fb)
            except SolverIterationLimit:
                # 가능성 판정이 아니므로 infeasible 로 세지 않는다
                self.summary.solver_limits += 1
                self._event(t, "qp_iteration_limit", i, reason="active-set iteration cap reached")
                sol = fallback_solution(agent.problem) or MpcSolution(
                    status="fallback", xhat0=None, v_seq=None, cost=float("nan")
                )
                inputs[i] = self._fallback_input(i, fb, psi, sol)
                solutions[i] = sol
                continue

            if sol.optimal:
                inputs[i] = control_law(agent.problem, model, fb, psi, sol)
                if not contains_point(agent.controller.Z, fb - sol.xhat0, tol=self.cfg.tube_tol):
                    self.summary.tube_violations += 1
            else:
                self.summary.mpc_infeasible += 1
                self._event(t, "mpc_infeasible", i, reason="P_N infeasible at the current state")
                sol = fallback_solution(agent.problem) or sol
                inputs[i] = self._fallback_input(i, fb, psi, sol)
            solutions[i] = sol
        return inputs, solutions

    def _fallback_input(self, i: int, fb: np.ndarray, psi: np.ndarray, sol: MpcSolution) -> np.ndarray:
        agent = self.pool[i]
        model = self.net.model(i)
        if sol.xhat0 is not None:
            try:
                return control_law(agent.problem, model, fb, psi, sol)
            except CertificateViolation:
                logger.debug("subsystem %s: fallback plan leaves U, saturating", i)
        gain = float(model.g(fb, psi))
        h = np.atleast_1d(np.asarray(model.h(fb, psi), dtype=float))
        problem = agent.problem
        u = (h + problem.u_s + agent.controller.K @ (fb - problem.x_s)) / gain
        lo, hi = state_box(model.U)
        return np.clip(u, lo, hi)

    def _feedback(self, i: int, y: Mapping[int, np.ndarray]) -> np.ndarray:
        model = self.net.model(i)
        if model.feedback != "measured":
            return self.states[i].copy()
        diag = self.net.diag(i)
        idx = [diag.local_index(i, c) for c in range(model.n)]
        return np.asarray([y[i][k] for k in idx], dtype=float)

    def _record(
        self,
        t: int,
        y: Mapping[int, np.ndarray],
        inputs: Mapping[int, np.ndarray],
        solutions: Mapping[int, Optional[MpcSolution]],
        before: Mapping[int, tuple[np.ndarray, np.ndarray]],
        rounds: Mapping[int, UnitRound],
        effects: Mapping[int, np.ndarray],
        plugged: Mapping[int, int],
    ) -> None:
        time = t * self.bundle.sample_time
        for i in self.net.ids:
            diag = self.net.diag(i)
            unit = self.pool[i].unit
            xhat, eps = before[i]
            retired = retired_mask(self.net, i)
            sol = solutions.get(i)
            u = inputs.get(i)
            upd = rounds.get(i)
            for c, entry in enumerate(diag.x_layout):
                own = entry.subsystem == i
                truth = 0.0 if retired[c] else float(self.states[entry.subsystem][entry.component])
                residual = 0.0 if retired[c] else abs(float(y[i][c]) - float(xhat[c]))
                parts = {name: float(upd.parts[name][c]) if upd is not None else 0.0 for name in THRESHOLD_PARTS}
                pick = int(upd.picks[c]) if upd is not None else int(unit.picks[c])
                has_plan = own and sol is not None and sol.xhat0 is not None
                self.rows.append(
                    TraceRecord(
                        time=time,
                        step=t,
                        subsystem=i,
                        component=c,
                        owner=entry.subsystem,
                        owner_component=entry.component,
                        state=truth,
                        measured=float(y[i][c]),
                        estimate=float(xhat[c]),
                        residual=residual,
                        threshold=float(eps[c]),
                        consensus_pick=pick,
                        nominal=float(sol.xhat0[entry.component]) if has_plan else float("nan"),
                        input=float(u[0]) if own and u is not None else float("nan"),
                        aux=float(sol.v_seq[0][0]) if has_plan else float("nan"),
                        mpc_status=sol.status if own and sol is not None else "-",
                        plugged=plugged[i],
                        fault_effect=float(effects.get(entry.subsystem, np.zeros(entry.component + 1))[entry.component]),
                        threshold_noise=parts["noise"],
                        threshold_coupling=parts["coupling"],
                        threshold_input=parts["input"],
                        threshold_drift=parts["drift"],
                    )
                )

    def _check_constraints(
        self,
        next_states: Mapping[int, np.ndarray],
        inputs: Mapping[int, np.ndarray],
        t: int,
    ) -> None:
        for i in self.net.ids:
            if not self.net.is_active(i):
                continue
            model = self.net.model(i)
            ok = contains_point(model.X, next_states[i], tol=1e-7) and contains_point(model.U, inputs[i], tol=1e-7)
            if ok:
                continue
            self.summary.constraint_violations += 1
            faulty = any(f.target == i and f.is_active(t) for f in self.bundle.faults)
            if not faulty:
                self.summary.healthy_constraint_violations += 1
                logger.debug("subsystem %s violates its constraints after step %s", i, t)

    def _event(self, t: int, kind: str, target: int, *, affected: Sequence[int] = (), reason: str = "") -> None:
        self.events.append(
            EventRecord(
                time=t * self.bundle.sample_time,
                step=t,
                kind=kind,
                target=target,
                affected=list(affected),
                reason=reason,
            )
        )


def simulate(
    bundle: ScenarioBundle,
    controllers: Mapping[int, TubeController],
    *,
    config: Optional[EngineOptions] = None,
    steps: Optional[int] = None,
) -> SimulationResult:
    return ClosedLoopEngine(bundle, controllers, config=config).run(steps)


def _trigger_text(plan: ReconfigPlan) -> str:
    if isinstance(plan.trigger, DetectionDecision):
        return f"fault detected at step {plan.trigger.time}"
    return str(plan.trigger)
