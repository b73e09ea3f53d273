# pnpdm/app/ui/components/run_panel.py
"""
Run Panel (Streamlit)

역할:
- 시나리오 공통 실행 폼 (seed / steps / retighten / dwell)
- design → simulate → analyze 호출 후 요약 / 이벤트 / 잔차 차트 표시
- 시나리오별 파라미터 덮어쓰기는 각 page 에서 params_override 로 전달
"""

from __future__ import annotations

from typing import Any, Dict, List, Mapping, Optional

import streamlit as st

from app.cli import EXIT_CERTIFICATE, EXIT_INFEASIBLE, EXIT_OK, cmd_analyze, cmd_simulate
from app.core.errors import ConfigError, InvertibilityFault, NumericalFault
from app.core.logging import log_error
from app.core.run_config import RunConfig, load_run_config
from app.storage import local_fs


# -----------------------------
# Helpers
# -----------------------------
def _residual_series(rows: List[Dict[str, Any]], subsystem: int) -> Dict[str, List[float]]:
    """
    subsystem 의 component 별 |ε| 와 threshold 시계열
    """
    series: Dict[str, List[float]] = {}
    for row in rows:
        if int(row["subsystem"]) != subsystem:
            continue
        c = int(row["component"])
        series.setdefault(f"|eps{c}|", []).append(abs(float(row["residual"])))
        series.setdefault(f"eps_bar{c}", []).append(float(row["threshold"]))
    return series


def _state_series(rows: List[Dict[str, Any]], component: int = 0) -> Dict[str, List[float]]:
    series: Dict[str, List[float]] = {}
    for row in rows:
        if int(row["component"]) != component or int(row["owner"]) != int(row["subsystem"]):
            continue
        series.setdefault(f"x{int(row['subsystem'])}", []).append(float(row["state"]))
    return series


def _render_summary(summary: Mapping[str, Any]) -> None:
    col1, col2, col3, col4 = st.columns(4)
    col1.metric("탐지", len(summary.get("detections", {})))
    col2.metric("unplug / replug", f"{len(summary.get('unplugged', []))} / {len(summary.get('replugged', []))}")
    col3.metric("제약 위반 (정상)", summary.get("healthy_constraint_violations", 0))
    col4.metric("MPC infeasible", summary.get("mpc_infeasible", 0))
    if summary.get("solver_limits"):
        st.caption(f"QP 반복 상한 도달: {summary['solver_limits']} 회 (fallback plan 사용)")

    if summary.get("detections"):
        st.markdown("**탐지 시점**")
        st.json(summary["detections"])


# -----------------------------
# Public API
# -----------------------------
def render_run_panel(
    *,
    scenario: str,
    params_override: Optional[Dict[str, Any]] = None,
    form_key: Optional[str] = None,
) -> None:
    """
    실행 폼 + 결과 렌더링

    Args:
        scenario: preset 이름 (vdpo | pns)
        params_override: preset params 위에 덮어쓸 값
    """
    try:
        base = load_run_config(scenario)
    except ConfigError as e:
        st.error(str(e))
        return

    with st.form(form_key or f"{scenario}_run_form"):
        col1, col2 = st.columns(2)
        with col1:
            seed = st.number_input("seed", min_value=0, value=int(base.seed), step=1)
            steps = st.number_input("steps", min_value=0, value=int(base.steps), step=10)
        with col2:
            retighten = st.checkbox("재구성 후 terminal set 재조정 (retighten)", value=base.retighten)
            dwell_min = st.number_input("최소 dwell (step)", min_value=0, value=int(base.dwell_min), step=1)
        submitted = st.form_submit_button("🚀 설계 + 시뮬레이션 실행", use_container_width=True)

    if not submitted:
        return

    params = dict(base.params)
    params.update(params_override or {})
    cfg = RunConfig(
        scenario=base.scenario,
        seed=int(seed),
        steps=int(steps),
        params=params,
        design=dict(base.design),
        retighten=bool(retighten),
        dwell_min=int(dwell_min),
        source=base.source,
    )

    with st.spinner("제어기 설계 및 closed-loop 실행 중..."):
        try:
            code, report = cmd_simulate(cfg)
        except ConfigError as e:
            st.error(f"설정 오류: {e}")
            return
        except (NumericalFault, InvertibilityFault) as e:
            log_error(message=str(e), action="ui_simulate", exc=e)
            st.error(f"수치 오류: {e}")
            return

    if code == EXIT_INFEASIBLE:
        st.error("설계 불가능한 서브시스템이 있습니다.")
        st.json(report.get("subsystems", {}))
        return
    if code == EXIT_CERTIFICATE:
        st.error("재구성 중 인증서 위반이 발생했습니다.")
        st.json(report)
        return
    if code != EXIT_OK:
        st.error(f"실행 실패 (exit {code})")
        return

    st.success(f"완료: {report['run_dir']}" + (" (저장된 설계 재사용)" if report.get("reused_design") else ""))
    _render_summary(report["summary"])

    st.divider()

    run_path = local_fs.run_dir(scenario=cfg.scenario, seed=cfg.seed)
    rows = local_fs.read_trace(run_path / local_fs.TRACE_FILE)
    events = local_fs.read_events(run_path / local_fs.EVENTS_FILE)

    # -----------------------------
    # Charts
    # -----------------------------
    st.subheader("📈 상태 궤적 (첫 번째 성분)")
    if rows:
        st.line_chart(_state_series(rows))

    subsystems = sorted({int(r["subsystem"]) for r in rows})
    if subsystems:
        detected = [int(k) for k in report["summary"].get("detections", {})]
        default = detected[0] if detected else subsystems[0]
        target = st.selectbox("잔차를 볼 서브시스템", subsystems, index=subsystems.index(default))
        st.subheader(f"🔎 서브시스템 {target} 잔차 / 임계값")
        st.line_chart(_residual_series(rows, target))

    # -----------------------------
    # Events / Analysis
    # -----------------------------
    st.subheader("🧾 이벤트")
    if events:
        st.dataframe(events, use_container_width=True)
    else:
        st.info("이벤트가 없습니다.")

    try:
        _, analysis = cmd_analyze(cfg)
    except ConfigError as e:
        st.warning(f"분석을 건너뜁니다: {e}")
        return

    with st.expander("분석 결과 (detectability / envelope)"):
        st.json(analysis)
