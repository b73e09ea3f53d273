# pnpdm/app/core/run_config.py
"""
Run Configuration (YAML)

역할:
- 시나리오 YAML (preset 이름 또는 경로) 로딩 / 검증
- CLI 플래그(--seed, --steps, --retighten, --dwell-min) 덮어쓰기
- 설계 산출물 재사용 판정용 fingerprint

파일 구조:
    scenario: vdpo | pns
    seed: 0
    steps: 100
    params: {...}   # 시나리오 config dataclass 필드
    design: {...}   # 설계 / 진단 파라미터
    run: {retighten: false, dwell_min: 0}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

import yaml

from app.core.config import DEFAULT_SEED, PRESETS
from app.core.errors import ConfigError


T = TypeVar("T")

_TOP_LEVEL = {"scenario", "seed", "steps", "params", "design", "run"}
_RUN_KEYS = {"retighten", "dwell_min"}


@dataclass
class RunConfig:
    scenario: str
    seed: int = DEFAULT_SEED
    steps: int = 100
    params: Dict[str, Any] = field(default_factory=dict)
    design: Dict[str, Any] = field(default_factory=dict)
    retighten: bool = False
    dwell_min: int = 0
    source: str = ""  # preset 이름 또는 파일 경로

    def fingerprint(self) -> str:
        """
        설계에 영향을 주는 항목(scenario, seed, params, design)의 sha256
        """
        return config_fingerprint(
            {"scenario": self.scenario, "seed": self.seed, "params": self.params, "design": self.design}
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "steps": self.steps,
            "params": self.params,
            "design": self.design,
            "run": {"retighten": self.retighten, "dwell_min": self.dwell_min},
            "source": self.source,
        }


def config_fingerprint(raw: Mapping[str, Any]) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_config_path(config: str | Path) -> Path:
    """
    preset 이름 → 파일 경로, 아니면 그대로 경로로 해석

    Raises:
        ConfigError: 파일 없음
    """
    if isinstance(config, str) and config in PRESETS:
        return PRESETS[config]
    path = Path(config)
    if not path.is_file():
        raise ConfigError(f"config not found: {config} (presets: {sorted(PRESETS)})")
    return path


def load_run_config(
    config: str | Path,
    *,
    seed: Optional[int] = None,
    steps: Optional[int] = None,
    retighten: Optional[bool] = None,
    dwell_min: Optional[int] = None,
) -> RunConfig:
    """
    YAML 로딩 + 플래그 덮어쓰기

    Raises:
        ConfigError: 파싱 실패 / 알 수 없는 key / 잘못된 값
    """
    path = resolve_config_path(config)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    unknown = set(raw) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if "scenario" not in raw:
        raise ConfigError(f"{path}: missing 'scenario'")

    run = raw.get("run") or {}
    unknown = set(run) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown run keys {sorted(unknown)}")

    cfg = RunConfig(
        scenario=str(raw["scenario"]),
        seed=int(raw.get("seed", DEFAULT_SEED)),
        steps=int(raw.get("steps", 100)),
        params=dict(raw.get("params") or {}),
        design=dict(raw.get("design") or {}),
        retighten=bool(run.get("retighten", False)),
        dwell_min=int(run.get("dwell_min", 0)),
        source=str(config),
    )
    if seed is not None:
        cfg.seed = int(seed)
    if steps is not None:
        cfg.steps = int(steps)
    if retighten is not None:
        cfg.retighten = bool(retighten)
    if dwell_min is not None:
        cfg.dwell_min = int(dwell_min)

    if cfg.steps < 0:
        raise ConfigError(f"steps must be >= 0, got {cfg.steps}")
    if cfg.dwell_min < 0:
        raise ConfigError(f"dwell_min must be >= 0, got {cfg.dwell_min}")
    return cfg


def strict_dataclass(cls: Type[T], raw: Mapping[str, Any], *, section: str) -> T:
    """
    dict → dataclass. 알 수 없는 key는 ConfigError.
    """
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    try:
        return cls(**dict(raw))
    except TypeError as exc:
        raise ConfigError(f"invalid {section}: {exc}") from exc
