# pnpdm/app/core/errors.py
"""
Domain Exceptions

역할:
- 설정 / 차원 / 수치 / 런타임 인증서 위반을 구분하는 예외 계층
- CLI 종료 코드 매핑의 기준

주의:
- 제어기 설계 불가능(infeasible)은 예외가 아니라 값(InfeasibleDesign)으로 보고한다.
"""

from __future__ import annotations

from typing import Any, Optional


class DimensionMismatch(ValueError):
    """집합 / 행렬 차원이 서로 맞지 않음"""


class ConfigError(ValueError):
    """시나리오 / 실행 설정 오류 (CLI exit 4)"""


class MissingInput(ValueError):
    """활성 서브시스템에 입력이 공급되지 않음"""


class NumericalFault(RuntimeError):
    """LP / Riccati 실패, 비유한 상태값"""


class InvertibilityFault(RuntimeError):
    """정합 이득 g가 0에 가까움 (|g| < 1e-9)"""


class CertificateViolation(RuntimeError):
    """
    설계 인증서가 런타임에 깨짐 (CLI exit 3)

    report에는 위반 지점의 수치 정보를 담는다.
    """

    def __init__(self, message: str, *, report: Optional[dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.report = report or {}


class SolverIterationLimit(RuntimeError):
    """QP active-set 반복 상한 도달 (infeasible과 구분)"""


class CommunicationFault(RuntimeError):
    """가중치 1인 송신자의 합의 메시지가 누락됨"""


class ReconfigurationError(RuntimeError):
    """비활성 서브시스템 unplug / 활성 서브시스템 plug-in 요청"""


class PlugInRejected(ReconfigurationError):
    """plug-in 초기 상태가 MPC 가능 영역 밖"""

    def __init__(self, message: str, *, plan: Any = None) -> None:
        super().__init__(message)
        self.plan = plan
