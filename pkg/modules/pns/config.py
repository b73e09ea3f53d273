# pnpdm/modules/pns/config.py
"""
Power Network System Configuration

- 기본값 = presets/pns.yaml
- 면적(area)별 파라미터는 5개 값 목록, tie-line 은 [i, j, P_ij]
- 부하 표 항목 [t, area, ΔP_L 증분] 은 해당 시점부터 누적 적용
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from app.core.errors import ConfigError
from app.core.run_config import strict_dataclass


def _five(value: float) -> List[float]:
    return [value] * 5


@dataclass
class PnsDesign:
    Q: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])  # diag
    R: float = 1.0
    N: int = 15
    omega: float = 1e-3


@dataclass
class PnsConfig:
    H: List[float] = field(default_factory=lambda: _five(8.0))  # 관성 상수
    D: List[float] = field(default_factory=lambda: _five(1.0))
    Tt: List[float] = field(default_factory=lambda: _five(0.5))  # 터빈 시정수
    Tg: List[float] = field(default_factory=lambda: _five(0.2))  # 조속기 시정수
    R: List[float] = field(default_factory=lambda: _five(0.05))  # 속도 조정률
    tie_lines: List[List[float]] = field(
        default_factory=lambda: [[1, 2, 2.0], [2, 3, 2.0], [2, 5, 2.0], [3, 4, 2.0], [4, 5, 2.0]]
    )
    Ts: float = 1.0

    # 진단 분해: area → 추가로 감시하는 이웃 Δθ (나머지 parent Δθ 는 측정 결합 z)
    fd_shared_angles: Dict[int, List[int]] = field(default_factory=lambda: {2: [1, 3, 5], 3: [4], 5: [4]})

    theta_max: float = 0.1
    omega_max: float = 0.5
    pm_max: float = 1.0
    pv_max: float = 1.0
    u_max: float = 0.5
    rho_bound: float = 1e-3
    lam: float = 0.5

    load_table: List[List[float]] = field(
        default_factory=lambda: [
            [5, 1, 0.10],
            [15, 2, -0.16],
            [20, 1, -0.22],
            [20, 2, 0.12],
            [20, 3, -0.10],
            [30, 3, 0.10],
            [40, 4, 0.08],
            [40, 5, -0.10],
        ]
    )

    # 고장: fault_target 의 관성 상수가 fault_onset 부터 fault_H 로 감소
    fault_enabled: bool = True
    fault_target: int = 4
    fault_onset: int = 60
    fault_H: float = 1.0

    design: PnsDesign = field(default_factory=PnsDesign)

    @classmethod
    def from_dict(cls, params: Mapping[str, Any], design: Optional[Mapping[str, Any]] = None) -> "PnsConfig":
        raw = dict(params)
        if "design" in raw:
            raise ConfigError("pns params: 'design' belongs to the design section")
        cfg = strict_dataclass(cls, raw, section="pns params")
        cfg.design = strict_dataclass(PnsDesign, dict(design or {}), section="pns design")
        cfg.validate()
        return cfg

    @property
    def n_areas(self) -> int:
        return len(self.H)

    def tie_coefficients(self) -> Dict[tuple[int, int], float]:
        """
        (i, j) → P_ij, 양방향 대칭
        """
        out: Dict[tuple[int, int], float] = {}
        for i, j, p in self.tie_lines:
            out[(int(i), int(j))] = float(p)
            out[(int(j), int(i))] = float(p)
        return out

    def validate(self) -> None:
        n = self.n_areas
        if n < 2:
            raise ConfigError("at least two areas are required")
        for name in ("D", "Tt", "Tg", "R"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} must list {n} values")
        for name in ("H", "Tt", "Tg", "R"):
            if any(v <= 0 for v in getattr(self, name)):
                raise ConfigError(f"all {name} values must be > 0")
        if self.Ts <= 0:
            raise ConfigError(f"Ts must be > 0, got {self.Ts}")

        seen: Dict[tuple[int, int], float] = {}
        for entry in self.tie_lines:
            if len(entry) != 3:
                raise ConfigError(f"tie line entries are [i, j, P_ij], got {entry}")
            i, j, p = int(entry[0]), int(entry[1]), float(entry[2])
            if i == j or not (1 <= i <= n and 1 <= j <= n):
                raise ConfigError(f"invalid tie line {entry}")
            if p <= 0:
                raise ConfigError(f"tie line coefficient must be > 0: {entry}")
            key = (min(i, j), max(i, j))
            if key in seen and seen[key] != p:
                raise ConfigError(f"inconsistent P_ij for tie line {key}")
            seen[key] = p

        neighbors = {(min(int(e[0]), int(e[1])), max(int(e[0]), int(e[1]))) for e in self.tie_lines}
        for area, angles in self.fd_shared_angles.items():
            for j in angles:
                if (min(int(area), int(j)), max(int(area), int(j))) not in neighbors:
                    raise ConfigError(f"area {area} can only monitor neighbouring angles, got {j}")

        for entry in self.load_table:
            if len(entry) != 3 or not 1 <= int(entry[1]) <= n or int(entry[0]) < 0:
                raise ConfigError(f"invalid load table entry {entry}")
        for name in ("theta_max", "omega_max", "pm_max", "pv_max", "u_max", "rho_bound"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 < self.lam < 1.0:
            raise ConfigError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.fault_enabled and (not 1 <= self.fault_target <= n or self.fault_H <= 0):
            raise ConfigError("invalid fault script")
        if len(self.design.Q) != 4 or self.design.N < 1:
            raise ConfigError("Q must list 4 diagonal entries and N must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
