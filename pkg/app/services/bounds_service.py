# pnpdm/app/services/bounds_service.py
"""
Bounds Service (sampling-based set estimates)

역할:
- 비선형 사상의 범위를 box 샘플링으로 과대 근사할 때 쓰는 표본 생성
  (꼭짓점 + Latin hypercube + 중심)
- 측정 오차 부호 조합(±ρ̄ 꼭짓점) 생성

주의:
- 샘플링 결과는 근사이므로 호출 측에서 inflation factor를 곱해 쓴다.
"""

from __future__ import annotations

import itertools
from typing import Optional

import numpy as np
from scipy.stats import qmc


_MAX_VERTEX_DIM = 12


def box_vertices(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """
    box 꼭짓점 전체 (차원이 크면 빈 배열)
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.size
    if d == 0 or d > _MAX_VERTEX_DIM:
        return np.zeros((0, d))
    corners = np.array(list(itertools.product((0.0, 1.0), repeat=d)))
    return lo + corners * (hi - lo)


def latin_hypercube(lo: np.ndarray, hi: np.ndarray, n_samples: int, seed: int = 0) -> np.ndarray:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.size
    if d == 0 or n_samples <= 0:
        return np.zeros((max(n_samples, 0), d))
    sampler = qmc.LatinHypercube(d=d, seed=np.random.default_rng(seed))
    unit = sampler.random(n_samples)
    return lo + unit * (hi - lo)


def sample_box(lo: np.ndarray, hi: np.ndarray, n_samples: int, seed: int = 0) -> np.ndarray:
    """
    꼭짓점 + Latin hypercube + 중심 표본

    Returns:
        (k, d) 표본 배열
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    parts = [
        box_vertices(lo, hi),
        latin_hypercube(lo, hi, n_samples, seed),
        ((lo + hi) / 2.0)[None, :],
    ]
    return np.vstack(parts)


def grid(lo: np.ndarray, hi: np.ndarray, points_per_dim: int) -> np.ndarray:
    """
    균일 격자 (양 끝 포함)
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.size == 0:
        return np.zeros((1, 0))
    axes = [np.linspace(a, b, max(points_per_dim, 2)) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sign_corners(bound: np.ndarray, *, limit: Optional[int] = 256, seed: int = 0) -> np.ndarray:
    """
    ±bound 꼭짓점 전체 + 0 벡터.
    조합 수가 limit를 넘으면 결정적 난수로 일부만 고른다.
    """
    bound = np.asarray(bound, dtype=float)
    d = bound.size
    zero = np.zeros((1, d))
    if d == 0:
        return zero
    total = 2 ** d
    if limit is None or total <= limit:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    else:
        rng = np.random.default_rng(seed)
        signs = rng.choice((-1.0, 1.0), size=(limit, d))
    return np.vstack([zero, signs * bound])
