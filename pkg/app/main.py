# pnpdm/app/main.py
"""
PnP FD-MPC Workbench - Main Entry (Streamlit)

역할:
- Streamlit 앱 단일 엔트리 포인트
- 글로벌 네비게이션(navbar) 처리
- 페이지 라우팅
"""

from __future__ import annotations

# -----------------------------
# Path Fix (IMPORTANT)
# -----------------------------
import sys
from pathlib import Path

ROOT_DIR = Path(__file__).resolve().parents[1]  # pnpdm/
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

# -----------------------------
# Imports
# -----------------------------
import streamlit as st

from app.core.config import APP_NAME
from app.ui.components.navbar import render_navbar


# -----------------------------
# Streamlit Config
# -----------------------------
st.set_page_config(
    page_title=APP_NAME,
    page_icon="🧩",
    layout="wide",
)


# -----------------------------
# Main App
# -----------------------------
def main():
    selected = render_navbar()

    # -----------------------------
    # Page Routing
    # -----------------------------
    if selected == "vdpo_simulate":
        from modules.vdpo.pages.simulate import run

        run()

    elif selected == "pns_simulate":
        from modules.pns.pages.simulate import run

        run()

    elif selected == "admin_overview":
        from modules.admin.pages.overview import run

        run()

    else:
        # Home
        st.title(f"🏠 {APP_NAME}")
        st.caption("분산 tube MPC + 분산 고장 탐지 + plug-and-play 재구성")

        st.markdown(
            """
### 시나리오

#### 🔁 vdPO ring
- 결합된 van der Pol 진동자 ring, 액추에이터 고착 고장
- 탐지 → unplug → 수리 후 replug

#### ⚡ 5-area 전력망
- 부하-주파수 제어, area 관성 감소 고장
- 공유 위상각을 통한 consensus 기반 탐지

---

CLI 에서도 같은 흐름을 실행할 수 있습니다: `python -m app.cli simulate --config vdpo`
"""
        )


# -----------------------------
# Run
# -----------------------------
if __name__ == "__main__":
    main()
