# pnpdm/modules/pns/pages/simulate.py
"""
Power Network - Simulate Page (Streamlit)

역할:
- 5-area 부하-주파수 제어 시나리오
- 관성 감소 고장 입력 후 공통 run panel 호출
"""

from __future__ import annotations

import streamlit as st

from app.ui.components.run_panel import render_run_panel


# -----------------------------
# Page Entry
# -----------------------------
def run() -> None:
    st.title("⚡ 5-area 전력망")
    st.caption("부하 변동 하에서 area 별 tube MPC 와 분산 고장 탐지를 실행합니다.")

    st.divider()

    col1, col2 = st.columns(2)
    with col1:
        fault_enabled = st.checkbox("관성 고장 주입", value=True)
        fault_target = st.selectbox("고장 area", options=[1, 2, 3, 4, 5], index=3)
    with col2:
        fault_onset = st.number_input("고장 시작 step", min_value=0, value=60, step=1)
        fault_H = st.number_input("고장 후 관성 H", min_value=0.1, value=1.0, step=0.5)

    override = {
        "fault_enabled": bool(fault_enabled),
        "fault_target": int(fault_target),
        "fault_onset": int(fault_onset),
        "fault_H": float(fault_H),
    }

    st.divider()
    render_run_panel(scenario="pns", params_override=override)
