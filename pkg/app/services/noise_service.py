# pnpdm/app/services/noise_service.py
"""
Noise Service (seeded counter-based bounded noise)

역할:
- 측정 오차 ρ_i를 box O_i 위 균등분포로 생성
- (seed, step, subsystem, channel) 만으로 값이 결정 → 실행 순서 / 병렬화와 무관하게 재현

현재 구현:
- numpy Philox counter 기반 Generator. counter 4번째 word로 용도(측정 / 초기상태)를 구분
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


_PURPOSE_MEASUREMENT = 0
_PURPOSE_INITIAL_STATE = 1


def _generator(seed: int, step: int, subsystem: int, channel: int, purpose: int) -> np.random.Generator:
    counter = [int(step), int(subsystem), int(channel), int(purpose)]
    return np.random.Generator(np.random.Philox(key=int(seed), counter=counter))


@dataclass(frozen=True)
class NoiseSource:
    """
    측정 오차 생성기. 같은 인자로 다시 호출하면 같은 값을 돌려준다.
    """

    seed: int = 0
    enabled: bool = True

    def draw(
        self,
        *,
        step: int,
        subsystem: int,
        bound: Sequence[float] | np.ndarray,
        channel: int = 0,
    ) -> np.ndarray:
        """
        [-bound, bound] 균등 분포 벡터
        """
        bound = np.asarray(bound, dtype=float)
        if not self.enabled or not np.any(bound > 0):
            return np.zeros_like(bound)
        rng = _generator(self.seed, step, subsystem, channel, _PURPOSE_MEASUREMENT)
        return rng.uniform(-1.0, 1.0, size=bound.shape) * bound


def initial_state(
    *,
    seed: int,
    subsystem: int,
    lo: Sequence[float] | np.ndarray,
    hi: Sequence[float] | np.ndarray,
) -> np.ndarray:
    """
    [lo, hi] 균등 분포 초기 상태 (시드 + 서브시스템 id로 결정)
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    rng = _generator(seed, 0, subsystem, 0, _PURPOSE_INITIAL_STATE)
    return lo + (hi - lo) * rng.random(size=lo.shape)
