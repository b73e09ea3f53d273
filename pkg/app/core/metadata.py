# pnpdm/app/core/metadata.py
"""
Run Metadata Model

역할:
- 시뮬레이션 결과(trace / event / summary)의 표준 레코드 구조 정의
- trace.csv / events.jsonl / summary.json 저장용 포맷 제공

주의:
- trace에는 wall-clock 시간이 들어가지 않는다 (동일 config+seed → 동일 바이트).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional


@dataclass
class TraceRecord:
    # 식별 정보 (step, subsystem, diag component 당 1행)
    time: float
    step: int
    subsystem: int
    component: int
    owner: int
    owner_component: int

    # 상태 / 측정 / 추정
    state: float
    measured: float
    estimate: float
    residual: float
    threshold: float
    consensus_pick: int

    # 제어 정보 (owner_component가 제어 상태 성분일 때만 의미 있음)
    nominal: float
    input: float
    aux: float
    mpc_status: str

    plugged: int
    fault_effect: float

    # threshold 분해 (noise / coupling / input / drift)
    threshold_noise: float = 0.0
    threshold_coupling: float = 0.0
    threshold_input: float = 0.0
    threshold_drift: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass
class EventRecord:
    time: float
    step: int
    kind: str  # detection | unplug | plug_in | plug_in_rejected | retune | retighten | dwell_defer | mpc_infeasible | qp_iteration_limit
    target: int
    affected: List[int] = field(default_factory=list)
    reason: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RunSummary:
    scenario: str
    seed: int
    steps: int
    detections: Dict[int, int] = field(default_factory=dict)  # subsystem → detection step
    unplugged: List[int] = field(default_factory=list)
    replugged: List[int] = field(default_factory=list)
    retuned: Dict[int, List[int]] = field(default_factory=dict)  # target → affected
    constraint_violations: int = 0
    healthy_constraint_violations: int = 0
    mpc_infeasible: int = 0
    solver_limits: int = 0  # QP 반복 상한에 걸린 (step, subsystem) 수
    tube_violations: int = 0  # x − x̂(0|t) ∉ Z 인 (step, subsystem) 수
    events: int = 0
    fingerprint: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """
        summary.json 저장용 dict 변환 (JSON key는 문자열)
        """
        raw = asdict(self)
        raw["detections"] = {str(k): v for k, v in self.detections.items()}
        raw["retuned"] = {str(k): v for k, v in self.retuned.items()}
        return raw
