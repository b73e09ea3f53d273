# pnpdm/app/pipeline/analyze.py
"""
Analyze Stage (offline detectability / estimation error analysis)

역할:
- 검출 가능성 판정: |Σ_{h=T0}^{t1−1} λ^{t1−1−h} φ(h)| > 2ε̄(t1) 인 최초 t1
- 추정 오차 BIBO envelope: ‖ε(t)‖ <= λ^t‖ε(0)‖ + (1−λ)⁻¹ sup‖U‖
- 임계값 분해: 각 부분(noise / coupling / input / drift)의 λ-할인 누적 기여
- trace 한 벌에 대한 종합 보고

주의:
- 모든 함수는 완료된 trace 를 읽기만 한다 (런타임 상태 없음).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.pipeline.detect import THRESHOLD_PARTS


TraceRow = Mapping[str, Any]


@dataclass
class EnvelopeReport:
    holds: bool
    max_ratio: float
    segments: int
    per_variable: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "holds": self.holds,
            "max_ratio": self.max_ratio,
            "segments": self.segments,
            "per_variable": self.per_variable,
        }


# -----------------------------
# Public API
# -----------------------------
def detectability_check(
    phi_trace: Sequence[float],
    lam: float,
    threshold_trace: Sequence[float],
    T0: int,
) -> Optional[int]:
    """
    최초 검출 가능 시점

    Args:
        phi_trace: 시점별 고장 효과 φ(t)
        lam: 필터 파라미터 λ
        threshold_trace: 시점별 임계값 ε̄(t) (같은 시간 격자)
        T0: 고장 시작 시점

    Returns:
        t1 (> T0) 또는 None
    """
    phi = np.asarray(phi_trace, dtype=float)
    eps = np.asarray(threshold_trace, dtype=float)
    horizon = min(phi.size + 1, eps.size)
    acc = 0.0
    for t1 in range(T0 + 1, horizon):
        acc = lam * acc + phi[t1 - 1]
        if abs(acc) > 2.0 * eps[t1]:
            return t1
    return None


def estimation_error_envelope(
    rows: Sequence[TraceRow],
    lam: float,
    *,
    until: Optional[int] = None,
    exclude: Sequence[int] = (),
) -> EnvelopeReport:
    """
    공유 변수(물리 변수)별 추정 오차 벡터 ε_k = (x_k − x̂_{j,k})_{j∈S^k} 의 BIBO bound 확인

    U(t) = ε(t+1) − λ W(t) ε(t), W(t)는 trace의 consensus_pick으로 복원한 one-hot 행렬.
    멤버 구성이 바뀌면 새 구간으로 다시 시작한다.
    """
    grouped = _group_by_variable(rows, until=until, exclude=exclude)
    max_ratio = 0.0
    segments = 0
    per_variable: Dict[str, float] = {}
    for key, by_step in grouped.items():
        ratio, count = _variable_envelope(by_step, lam)
        segments += count
        per_variable[f"{key[0]}:{key[1]}"] = ratio
        max_ratio = max(max_ratio, ratio)
    return EnvelopeReport(
        holds=max_ratio <= 1.0 + 1e-9,
        max_ratio=max_ratio,
        segments=segments,
        per_variable=per_variable,
    )


def sigma_breakdown(
    rows: Sequence[TraceRow],
    lam: float,
    *,
    subsystem: int,
    component: int,
    t: int,
) -> Dict[str, float]:
    """
    ε̄(t) ≈ λ^t ε̄(0) + Σ_{h<t} λ^{t−1−h} Σ parts(h) 의 부분별 기여

    Returns:
        {"initial", "noise", "coupling", "input", "drift", "carry", "threshold"}
    """
    series = sorted(
        (r for r in rows if int(r["subsystem"]) == subsystem and int(r["component"]) == component),
        key=lambda r: int(r["step"]),
    )
    if not series:
        return {}
    by_step = {int(r["step"]): r for r in series}
    first = int(series[0]["step"])
    out = {name: 0.0 for name in THRESHOLD_PARTS}
    for h in range(first, t):
        row = by_step.get(h)
        if row is None:
            continue
        weight = lam ** (t - 1 - h)
        for name in THRESHOLD_PARTS:
            out[name] += weight * float(row[f"threshold_{name}"])
    out["initial"] = lam ** (t - first) * float(series[0]["threshold"])
    out["carry"] = out["initial"] + sum(out[name] for name in THRESHOLD_PARTS)
    out["threshold"] = float(by_step[t]["threshold"]) if t in by_step else float("nan")
    return out


def analyze_trace(
    rows: Sequence[TraceRow],
    *,
    lam: float,
    fault_target: Optional[int] = None,
    fault_onset: Optional[int] = None,
) -> Dict[str, Any]:
    """
    trace 종합 분석

    - 시뮬레이터가 기록한 검출 시점 (residual > threshold 최초 행)
    - 고장 서브시스템 성분별 detectability t1 (φ = fault_effect) 및 교차 확인
    - t1 시점 임계값 분해
    - 고장 전 구간(고장 서브시스템 제외) BIBO envelope
    """
    report: Dict[str, Any] = {"lambda": lam, "detections": recorded_detections(rows)}

    if fault_target is not None and fault_onset is not None:
        per_component: Dict[int, Optional[int]] = {}
        breakdown: Dict[int, Dict[str, float]] = {}
        for c, series in _component_series(rows, fault_target).items():
            phi = [float(r["fault_effect"]) for r in series]
            eps = [float(r["threshold"]) for r in series]
            t1 = detectability_check(phi, lam, eps, fault_onset)
            per_component[c] = t1
            if t1 is not None:
                breakdown[c] = sigma_breakdown(rows, lam, subsystem=fault_target, component=c, t=t1)
        found = [t for t in per_component.values() if t is not None]
        analyzer_t1 = min(found) if found else None
        simulated = report["detections"].get(fault_target)
        report["detectability"] = {
            "target": fault_target,
            "onset": fault_onset,
            "per_component": per_component,
            "earliest": analyzer_t1,
            "simulated": simulated,
            "consistent": analyzer_t1 is None or simulated is None or simulated <= analyzer_t1,
            "breakdown": breakdown,
        }

    until = fault_onset if fault_onset is not None else None
    exclude = [fault_target] if fault_target is not None else []
    report["envelope"] = estimation_error_envelope(rows, lam, until=until, exclude=exclude).to_dict()
    return report


def recorded_detections(rows: Sequence[TraceRow]) -> Dict[int, int]:
    """
    서브시스템별 residual > threshold 최초 step (plugged 행만)
    """
    out: Dict[int, int] = {}
    for r in sorted(rows, key=lambda r: (int(r["step"]), int(r["subsystem"]), int(r["component"]))):
        i = int(r["subsystem"])
        if i in out or not int(r["plugged"]):
            continue
        if float(r["residual"]) > float(r["threshold"]):
            out[i] = int(r["step"])
    return out


# -----------------------------
# Internal Helpers
# -----------------------------
def _component_series(rows: Sequence[TraceRow], subsystem: int) -> Dict[int, List[TraceRow]]:
    series: Dict[int, List[TraceRow]] = defaultdict(list)
    for r in rows:
        if int(r["subsystem"]) == subsystem:
            series[int(r["component"])].append(r)
    return {c: sorted(v, key=lambda r: int(r["step"])) for c, v in sorted(series.items())}


def _group_by_variable(
    rows: Sequence[TraceRow],
    *,
    until: Optional[int],
    exclude: Sequence[int],
) -> Dict[Tuple[int, int], Dict[int, Dict[int, TraceRow]]]:
    """
    (owner, owner_component) → step → subsystem → row
    """
    skip = set(exclude)
    grouped: Dict[Tuple[int, int], Dict[int, Dict[int, TraceRow]]] = defaultdict(lambda: defaultdict(dict))
    for r in rows:
        step = int(r["step"])
        if until is not None and step > until:
            continue
        i = int(r["subsystem"])
        owner = int(r["owner"])
        if i in skip or owner in skip or not int(r["plugged"]) or int(r["consensus_pick"]) < 0:
            continue
        grouped[(owner, int(r["owner_component"]))][step][i] = r
    return grouped


def _variable_envelope(by_step: Mapping[int, Mapping[int, TraceRow]], lam: float) -> Tuple[float, int]:
    steps = sorted(by_step)
    max_ratio = 0.0
    segments = 0
    members: Optional[Tuple[int, ...]] = None
    eps0 = 0.0
    sup_u = 0.0
    start = 0
    prev_step: Optional[int] = None
    prev_err: Optional[Dict[int, float]] = None
    prev_rows: Optional[Mapping[int, TraceRow]] = None

    for step in steps:
        rows = by_step[step]
        current = tuple(sorted(rows))
        err = {i: float(r["state"]) - float(r["estimate"]) for i, r in rows.items()}
        contiguous = prev_step is not None and step == prev_step + 1 and current == members

        if not contiguous:
            members = current
            eps0 = max(abs(v) for v in err.values())
            sup_u = 0.0
            start = step
            segments += 1
        else:
            # U(t−1) = ε(t) − λ W(t−1) ε(t−1)
            u = 0.0
            for i in current:
                pick = int(prev_rows[i]["consensus_pick"])
                source = prev_err.get(pick, prev_err[i])
                u = max(u, abs(err[i] - lam * source))
            sup_u = max(sup_u, u)
            norm = max(abs(v) for v in err.values())
            bound = lam ** (step - start) * eps0 + sup_u / (1.0 - lam)
            if bound > 0:
                max_ratio = max(max_ratio, norm / bound)
            elif norm > 0:
                max_ratio = float("inf")

        prev_step, prev_err, prev_rows = step, err, rows
    return max_ratio, segments
