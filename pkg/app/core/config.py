# pnpdm/app/core/config.py
"""
Global App Configuration

- 환경변수(.env) 기반 설정 로딩
- 앱 전역에서 참조하는 경로 / 수치 허용오차 상수 정의
"""

from __future__ import annotations

import os
from pathlib import Path

from dotenv import load_dotenv


# -----------------------------
# Environment
# -----------------------------
# CLI / Streamlit 실행 시 한 번만 로딩되면 충분
load_dotenv()


# -----------------------------
# Project Paths
# -----------------------------
PROJECT_ROOT: Path = Path(__file__).resolve().parents[2]

APP_DIR: Path = PROJECT_ROOT / "app"
MODULES_DIR: Path = PROJECT_ROOT / "modules"
OUTPUTS_DIR: Path = Path(os.getenv("PNPDM_OUTPUTS_DIR", str(PROJECT_ROOT / "outputs")))
LOG_DIR: Path = Path(os.getenv("PNPDM_LOG_DIR", str(PROJECT_ROOT / "logs")))

PRESETS: dict[str, Path] = {
    "vdpo": MODULES_DIR / "vdpo" / "presets" / "vdpo.yaml",
    "pns": MODULES_DIR / "pns" / "presets" / "pns.yaml",
}


# -----------------------------
# App Info
# -----------------------------
APP_NAME: str = os.getenv("APP_NAME", "PnP FD-MPC Workbench")
ENV: str = os.getenv("ENV", "dev")  # dev | prod
LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO").upper()


# -----------------------------
# Simulation Defaults
# -----------------------------
DEFAULT_SEED: int = int(os.getenv("PNPDM_DEFAULT_SEED", "0"))

# 설계 단계 병렬 worker 수 (1이면 순차 실행)
DESIGN_WORKERS: int = int(os.getenv("PNPDM_DESIGN_WORKERS", "1"))


# -----------------------------
# Numerical Tolerances
# -----------------------------
SET_TOL: float = 1e-8  # support 값 비교 (집합 포함 판정)
KKT_TOL: float = 1e-7  # QP 최적성 잔차 상한
FEAS_TOL: float = 1e-9  # QP 초기 가능해 판정
INVERTIBILITY_TOL: float = 1e-9  # |g| 하한
QP_MAX_ITER: int = int(os.getenv("PNPDM_QP_MAX_ITER", "500"))
MRPI_MAX_S: int = 200


# -----------------------------
# Validation / Debug
# -----------------------------
def print_config_summary() -> None:
    """
    디버깅용: 현재 설정 요약 출력
    """
    print("=== App Config Summary ===")
    print(f"APP_NAME: {APP_NAME}")
    print(f"ENV: {ENV}")
    print(f"LOG_LEVEL: {LOG_LEVEL}")
    print(f"OUTPUTS_DIR: {OUTPUTS_DIR}")
    print(f"LOG_DIR: {LOG_DIR}")
    print(f"DEFAULT_SEED: {DEFAULT_SEED}")
    print(f"DESIGN_WORKERS: {DESIGN_WORKERS}")
