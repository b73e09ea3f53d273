# pnpdm/modules/vdpo/config.py
"""
vdPO Ring Configuration

- 기본값 = presets/vdpo.yaml
- from_dict: 알 수 없는 key 거부 (ConfigError)
- ring 구조는 validate(), 고장 일정은 bundle 을 만들 때 validate_fault_script()
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from app.core.errors import ConfigError
from app.core.run_config import strict_dataclass


@dataclass
class VdpoDesign:
    Q: List[float] = field(default_factory=lambda: [8.0, 1.8])  # diag
    R: float = 0.1
    N: int = 10
    Qf: List[float] = field(default_factory=lambda: [1.0, 1.0])  # 종단 이득용 diag
    Rf: float = 10.0
    omega: float = 1e-3
    n_samples: int = 400


@dataclass
class VdpoRingConfig:
    M: int = 20  # ring 크기
    alpha_bar: float = 0.1
    beta_bar: float = -0.3
    Ts: float = 0.1  # 샘플링 시간 (s)
    x1_max: float = 3.0
    x2_max: float = 2.0
    u_max: float = 8.0
    rho_bound: float = 0.1
    lam: float = 0.1
    init_half_width: float = 0.5  # x(0) ~ U[−w, w]²
    plant: str = "discrete"  # discrete | continuous
    substeps: int = 10  # continuous 플랜트 RK4 substep 수

    # 고장 시나리오 (step 단위)
    fault_enabled: bool = True
    fault_target: int = 11
    fault_onset: int = 25
    fault_value: float = 8.0
    repair_at: Optional[int] = 35
    replug_state: List[float] = field(default_factory=lambda: [2.5, 0.0])

    design: VdpoDesign = field(default_factory=VdpoDesign)

    @classmethod
    def from_dict(cls, params: Mapping[str, Any], design: Optional[Mapping[str, Any]] = None) -> "VdpoRingConfig":
        raw = dict(params)
        if "design" in raw:
            raise ConfigError("vdpo params: 'design' belongs to the design section")
        cfg = strict_dataclass(cls, raw, section="vdpo params")
        cfg.design = strict_dataclass(VdpoDesign, dict(design or {}), section="vdpo design")
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.M < 3:
            raise ConfigError(f"ring size M must be >= 3, got {self.M}")
        if self.Ts <= 0:
            raise ConfigError(f"Ts must be > 0, got {self.Ts}")
        for name in ("x1_max", "x2_max", "u_max", "rho_bound"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 < self.lam < 1.0:
            raise ConfigError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.plant not in ("discrete", "continuous"):
            raise ConfigError(f"Unsupported plant: {self.plant}")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        if len(self.design.Q) != 2 or len(self.design.Qf) != 2:
            raise ConfigError("Q and Qf must list 2 diagonal entries")
        if self.design.N < 1:
            raise ConfigError("horizon N must be >= 1")

    def validate_fault_script(self) -> None:
        """
        고장 / 수리 일정 확인 (build_bundle 에서만 호출)
        """
        if not self.fault_enabled:
            return
        if not 1 <= self.fault_target <= self.M:
            raise ConfigError(f"fault target {self.fault_target} outside 1..{self.M}")
        if self.repair_at is not None and self.repair_at <= self.fault_onset:
            raise ConfigError("repair_at must come after fault_onset")
        if len(self.replug_state) != 2:
            raise ConfigError("replug_state must have 2 components")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
