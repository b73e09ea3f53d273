# pnpdm/modules/vdpo/pages/simulate.py
"""
vdPO Ring - Simulate Page (Streamlit)

역할:
- ring 크기 / 결합 강도 / 고장 스크립트 입력
- 공통 run panel 호출 (설계 → closed-loop → 분석)
"""

from __future__ import annotations

import streamlit as st

from app.ui.components.run_panel import render_run_panel


# -----------------------------
# Page Entry
# -----------------------------
def run() -> None:
    st.title("🔁 van der Pol 진동자 ring")
    st.caption("결합된 vdPO ring 에서 액추에이터 고장을 탐지하고 unplug / replug 합니다.")

    st.divider()

    col1, col2 = st.columns(2)
    with col1:
        M = st.slider("진동자 수 M", min_value=3, max_value=30, value=20)
        beta_bar = st.number_input("결합 강도 β̄", value=-0.3, step=0.05, format="%.2f")
        plant = st.selectbox("플랜트", options=["discrete", "continuous"], index=0)

    with col2:
        fault_enabled = st.checkbox("고장 주입", value=True)
        fault_target = st.number_input("고장 대상", min_value=1, max_value=int(M), value=min(11, int(M)), step=1)
        fault_onset = st.number_input("고장 시작 step", min_value=0, value=25, step=1)
        repair_at = st.number_input("수리(replug) step", min_value=0, value=35, step=1)

    override = {
        "M": int(M),
        "beta_bar": float(beta_bar),
        "plant": plant,
        "fault_enabled": bool(fault_enabled),
        "fault_target": int(fault_target),
        "fault_onset": int(fault_onset),
        "repair_at": int(repair_at),
    }

    st.divider()
    render_run_panel(scenario="vdpo", params_override=override)
