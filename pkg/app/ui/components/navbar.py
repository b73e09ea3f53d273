# pnpdm/app/ui/components/navbar.py
"""
Global Navbar (Streamlit Sidebar)

역할:
- 사이드바 네비게이션 UI
- 선택된 메뉴 key 반환
"""

from __future__ import annotations

import streamlit as st

from app.core.config import APP_NAME, ENV


def render_navbar() -> str:
    """
    사이드바 네비게이션을 렌더링하고
    선택된 메뉴 key를 반환합니다.
    """
    with st.sidebar:
        st.title(f"🧩 {APP_NAME}")
        st.caption(f"env: {ENV}")

        st.divider()

        # -----------------------------
        # Menu Definition
        # -----------------------------
        menu = {
            "🏠 홈": "home",
            "🔁 vdPO ring": "vdpo_simulate",
            "⚡ 전력망 (5-area)": "pns_simulate",
            "📊 실행 이력 / 로그": "admin_overview",
        }

        selected_label = st.radio(
            "메뉴",
            list(menu.keys()),
            label_visibility="collapsed",
        )

        return menu[selected_label]
