# pnpdm/app/core/guards.py
"""
Guards (Pre-condition Checks)

역할:
- 수치 입력의 유한성 / 차원 / 부호 확인
- 위험한 요청 사전 차단 (출력 경로)
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np

from app.core.errors import DimensionMismatch, NumericalFault


# -----------------------------
# Numeric Guards
# -----------------------------
def require_finite(name: str, value: Iterable[float] | np.ndarray | float) -> np.ndarray:
    """
    유한값 필수 가드

    Returns:
        float64 배열

    Raises:
        NumericalFault: NaN / inf가 포함된 경우
    """
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NumericalFault(f"{name} contains non-finite values: {arr}")
    return arr


def require_same_dimension(expected: int, actual: int, *, what: str) -> None:
    """
    차원 일치 가드

    Raises:
        DimensionMismatch: 차원이 다를 경우
    """
    if expected != actual:
        raise DimensionMismatch(f"{what}: expected dimension {expected}, got {actual}")


def require_positive(name: str, value: float, *, strict: bool = True) -> float:
    """
    양수(또는 비음수) 필수 가드

    Raises:
        ValueError: 조건 위반
    """
    if strict and not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and not value >= 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return float(value)


# -----------------------------
# Path / File Guards
# -----------------------------
def ensure_safe_path(
    base_dir: Path,
    target_path: Path,
) -> Path:
    """
    Path Traversal 방지

    Args:
        base_dir: 기준 디렉토리
        target_path: 접근하려는 경로

    Returns:
        검증된 절대 경로

    Raises:
        ValueError: base_dir 밖을 접근하려는 경우
    """
    base_dir = base_dir.resolve()
    target_path = target_path.resolve()

    if target_path != base_dir and base_dir not in target_path.parents:
        raise ValueError("허용되지 않은 파일 접근입니다.")

    return target_path
