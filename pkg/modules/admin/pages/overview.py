# pnpdm/modules/admin/pages/overview.py
"""
Run Overview Page (Streamlit)

역할:
- 전체 실행 이력 요약
- 최근 실행 / 시스템 로그 관측
"""

from __future__ import annotations

import streamlit as st

from app.core.logging import read_recent_logs
from app.storage.local_fs import load_history


# -----------------------------
# Page Entry
# -----------------------------
def run():
    st.title("📊 실행 이력 / 로그")

    st.divider()

    # -----------------------------
    # Load History
    # -----------------------------
    try:
        history = load_history()
    except Exception:
        st.error("실행 이력을 불러오는 중 오류가 발생했습니다.")
        st.stop()

    total_runs = len(history)
    total_detections = sum(len(item.get("detections", {})) for item in history)

    # -----------------------------
    # KPI Summary
    # -----------------------------
    col1, col2 = st.columns(2)

    col1.metric("▶️ 전체 실행 수", total_runs)
    col2.metric("🚨 전체 탐지 수", total_detections)

    st.divider()

    # -----------------------------
    # Recent Activity
    # -----------------------------
    st.subheader("🕒 최근 실행")

    # 최신순 정렬
    recent_items = sorted(
        history,
        key=lambda x: x.get("created_at", ""),
        reverse=True,
    )[:10]

    if not recent_items:
        st.info("아직 실행 이력이 없습니다.")
    else:
        for idx, item in enumerate(recent_items, start=1):
            with st.container(border=True):
                st.markdown(
                    f"""
**{idx}. {item.get('scenario')}** (seed {item.get('seed', '-')}, {item.get('steps', '-')} steps)
- 탐지: {item.get('detections') or '-'}
- 경로: `{item.get('run_dir', '-')}`
- 실행일: {item.get('created_at', '-')}
"""
                )

    st.divider()

    # -----------------------------
    # Recent Logs
    # -----------------------------
    st.subheader("📄 최근 시스템 로그")

    try:
        logs = read_recent_logs(limit=30)
    except Exception:
        st.warning("로그 파일을 불러올 수 없습니다.")
        return

    if not logs:
        st.info("로그가 없습니다.")
    else:
        for line in logs:
            st.code(line, language="text")
