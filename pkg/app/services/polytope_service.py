# pnpdm/app/services/polytope_service.py
"""
Polytope Service (halfspace set arithmetic)

역할:
- 상태 / 입력 제약, 튜브 단면, 축소 제약 집합이 공통으로 쓰는 볼록 다면체 타입(HPolytope)
- Minkowski 합 / Pontryagin 차 / support / 포함 판정 / 스케일 / 선형 사상의 bounding box
- 최대 허용 불변 집합(maximal constraint-admissible set) 계산

현재 구현:
- box / zonotope: 생성자(center, generators)를 함께 저장 → support와 Minkowski 합이 closed-form으로 정확
- hpoly: scipy linprog(HiGHS) 기반 support / 공집합 판정, 활성 제약 재풀이로 정점 값 보정

주의:
- 집합 비교는 support 값에 대해 절대 허용오차 SET_TOL(1e-8)을 쓴다.
- Pontryagin 차가 공집합이면 예외가 아니라 None을 돌려준다.
- 정점 열거는 테스트 oracle에서만 쓴다.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, Literal, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from app.core.config import SET_TOL
from app.core.errors import ConfigError, DimensionMismatch, NumericalFault
from app.core.guards import require_same_dimension


logger = logging.getLogger(__name__)

SetKind = Literal["box", "zonotope", "hpoly"]

_PARALLEL_TOL = 1e-9
_ACTIVE_TOL = 1e-7


# -----------------------------
# Data Models
# -----------------------------
@dataclass(frozen=True, eq=False)
class HPolytope:
    """
    {x : normals @ x <= offsets}

    box / zonotope는 center, generators(열벡터 생성자)를 함께 가진다.
    box의 generators는 diag(half_widths).
    """

    normals: np.ndarray
    offsets: np.ndarray
    kind: SetKind = "hpoly"
    center: Optional[np.ndarray] = None
    generators: Optional[np.ndarray] = None
    bounded: bool = True

    @property
    def dim(self) -> int:
        return int(self.normals.shape[1])

    @property
    def n_facets(self) -> int:
        return int(self.normals.shape[0])

    @property
    def has_generators(self) -> bool:
        return self.kind in ("box", "zonotope")

    @property
    def half_widths(self) -> np.ndarray:
        """
        축 방향 반폭 (interval hull 기준)
        """
        if self.has_generators:
            return np.abs(self.generators).sum(axis=1)
        hull = interval_hull(self)
        return np.abs(hull.generators).sum(axis=1)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "box":
            return {
                "type": "box",
                "center": self.center.tolist(),
                "half_widths": self.half_widths.tolist(),
            }
        if self.kind == "zonotope":
            return {
                "type": "zonotope",
                "center": self.center.tolist(),
                "generators": self.generators.tolist(),
            }
        return {
            "type": "hpoly",
            "normals": self.normals.tolist(),
            "offsets": self.offsets.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "HPolytope":
        kind = raw.get("type")
        if kind == "box":
            return box(raw["center"], raw["half_widths"])
        if kind == "zonotope":
            center = np.asarray(raw["center"], dtype=float)
            generators = np.asarray(raw["generators"], dtype=float).reshape(center.size, -1)
            return zonotope(center, generators)
        if kind == "hpoly":
            return hpoly(raw["normals"], raw["offsets"])
        raise ConfigError(f"Unsupported set type: {kind}")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo <= self.hi:
            raise ValueError(f"Interval requires lo <= hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def magnitude(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= value <= self.hi + tol

    def scaled(self, factor: float) -> "Interval":
        a, b = self.lo * factor, self.hi * factor
        return Interval(min(a, b), max(a, b))

    def __add__(self, other: "Interval") -> "Interval":
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def to_dict(self) -> Dict[str, float]:
        return {"lo": self.lo, "hi": self.hi}


# -----------------------------
# Factories
# -----------------------------
def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def box(center: Sequence[float] | np.ndarray, half_widths: Sequence[float] | np.ndarray | float) -> HPolytope:
    """
    축 정렬 box {c + diag(hw) ξ : |ξ|_inf <= 1}
    """
    c = np.atleast_1d(np.asarray(center, dtype=float)).ravel()
    hw = np.broadcast_to(np.asarray(half_widths, dtype=float), c.shape).astype(float)
    if np.any(hw < 0):
        raise ValueError(f"box half widths must be >= 0, got {hw}")
    n = c.size
    eye = np.eye(n)
    normals = np.vstack([eye, -eye])
    offsets = np.concatenate([c + hw, -c + hw])
    return HPolytope(
        normals=_frozen(normals),
        offsets=_frozen(offsets),
        kind="box",
        center=_frozen(c),
        generators=_frozen(np.diag(hw)),
    )


def point(coords: Sequence[float] | np.ndarray | int) -> HPolytope:
    """
    한 점 집합. 정수 n을 넘기면 R^n의 원점.
    """
    if isinstance(coords, (int, np.integer)):
        coords = np.zeros(int(coords))
    c = np.atleast_1d(np.asarray(coords, dtype=float))
    return box(c, np.zeros_like(c))


def inf_ball(n: int, radius: float) -> HPolytope:
    return box(np.zeros(n), radius)


def box_from_bounds(lo: Sequence[float] | np.ndarray, hi: Sequence[float] | np.ndarray) -> HPolytope:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return box((lo + hi) / 2.0, np.maximum(hi - lo, 0.0) / 2.0)


def zonotope(
    center: Sequence[float] | np.ndarray,
    generators: np.ndarray,
    *,
    max_generators: Optional[int] = None,
) -> HPolytope:
    """
    zonotope {c + G ξ : |ξ|_inf <= 1}

    Args:
        center: 중심
        generators: (n, p) 생성자 행렬
        max_generators: n >= 3에서 생성자 수 상한 (Girard 축약, 외부 근사)
    """
    c = np.atleast_1d(np.asarray(center, dtype=float)).ravel()
    n = c.size
    G = np.asarray(generators, dtype=float)
    G = G.reshape(n, -1) if G.size else np.zeros((n, 0))
    G = _merge_generators(G)
    if max_generators is not None and n >= 3 and G.shape[1] > max_generators:
        G = _merge_generators(girard_reduce(G, max_generators))
    normals, offsets = _zonotope_hrep(c, G)
    return HPolytope(
        normals=_frozen(normals),
        offsets=_frozen(offsets),
        kind="zonotope",
        center=_frozen(c),
        generators=_frozen(G),
    )


def hpoly(
    normals: Sequence[Sequence[float]] | np.ndarray,
    offsets: Sequence[float] | np.ndarray,
    *,
    check: bool = True,
) -> HPolytope:
    """
    일반 H-다면체. check=True면 공집합 여부와 유계성을 LP로 인증한다.

    Raises:
        DimensionMismatch: normals / offsets 행 수 불일치
        ValueError: 공집합
    """
    N = np.atleast_2d(np.asarray(normals, dtype=float))
    b = np.atleast_1d(np.asarray(offsets, dtype=float)).ravel()
    if N.shape[0] != b.size:
        raise DimensionMismatch(f"{N.shape[0]} normals vs {b.size} offsets")
    bounded = True
    if check:
        if not _lp_feasible(N, b):
            raise ValueError("empty polytope")
        n = N.shape[1]
        axes = np.vstack([np.eye(n), -np.eye(n)])
        bounded = all(math.isfinite(_lp_support(N, b, d)) for d in axes)
    return HPolytope(normals=_frozen(N), offsets=_frozen(b), kind="hpoly", bounded=bounded)


# -----------------------------
# Public API
# -----------------------------
def support(p: HPolytope, direction: Sequence[float] | np.ndarray) -> float:
    """
    h_p(d) = max_{x in p} <d, x>

    Returns:
        support 값. 해당 방향으로 비유계면 math.inf

    Raises:
        DimensionMismatch: 방향 차원 불일치
    """
    d = np.asarray(direction, dtype=float).ravel()
    if d.size != p.dim:
        raise DimensionMismatch(f"direction of size {d.size} for a {p.dim}-dimensional set")
    if p.has_generators:
        return float(d @ p.center + np.abs(d @ p.generators).sum())
    return _lp_support(p.normals, p.offsets, d)


def support_many(p: HPolytope, directions: np.ndarray) -> np.ndarray:
    """
    여러 방향(행)에 대한 support 값 벡터
    """
    D = np.atleast_2d(np.asarray(directions, dtype=float))
    if D.shape[1] != p.dim:
        raise DimensionMismatch(f"directions of size {D.shape[1]} for a {p.dim}-dimensional set")
    if p.has_generators:
        return D @ p.center + np.abs(D @ p.generators).sum(axis=1)
    return np.array([_lp_support(p.normals, p.offsets, d) for d in D])


def minkowski_sum(a: HPolytope, b: HPolytope) -> HPolytope:
    """
    a ⊕ b = {x + y : x in a, y in b}

    - box ⊕ box → box, box/zonotope 조합 → zonotope (생성자 이어붙이기, 정확)
    - 그 외 → 두 집합 facet 법선의 합집합 위 support 합 (2차원에서 정확)
    """
    _require_same_dim(a, b, what="minkowski_sum")
    if a.has_generators and b.has_generators:
        if a.kind == "box" and b.kind == "box":
            return box(a.center + b.center, a.half_widths + b.half_widths)
        return zonotope(a.center + b.center, np.hstack([a.generators, b.generators]))

    normals = _unique_rows(np.vstack([a.normals, b.normals]))
    offsets = support_many(a, normals) + support_many(b, normals)
    if not np.all(np.isfinite(offsets)):
        keep = np.isfinite(offsets)
        return HPolytope(
            normals=_frozen(normals[keep]),
            offsets=_frozen(offsets[keep]),
            kind="hpoly",
            bounded=False,
        )
    return hpoly(normals, offsets, check=False)


def pontryagin_diff(a: HPolytope, b: HPolytope) -> Optional[HPolytope]:
    """
    a ⊖ b = {x : x ⊕ b ⊆ a}

    Returns:
        결과 집합. 공집합이면 None
    """
    _require_same_dim(a, b, what="pontryagin_diff")
    n = a.dim
    if a.kind == "box":
        eye = np.eye(n)
        hi = a.center + a.half_widths - support_many(b, eye)
        lo = a.center - a.half_widths + support_many(b, -eye)
        if not np.all(np.isfinite(hi)) or not np.all(np.isfinite(lo)):
            return None
        if np.any(hi < lo - SET_TOL):
            return None
        return box((hi + lo) / 2.0, np.maximum(hi - lo, 0.0) / 2.0)

    offsets = a.offsets - support_many(b, a.normals)
    if not np.all(np.isfinite(offsets)) or not _lp_feasible(a.normals, offsets):
        return None
    return HPolytope(
        normals=_frozen(a.normals),
        offsets=_frozen(offsets),
        kind="hpoly",
        bounded=a.bounded,
    )


def contains(outer: HPolytope, inner: HPolytope, tol: float = SET_TOL) -> bool:
    """
    outer의 모든 facet (n, c)에 대해 h_inner(n) <= c + tol 이면 True
    """
    _require_same_dim(outer, inner, what="contains")
    values = support_many(inner, outer.normals)
    return bool(np.all(values <= outer.offsets + tol))


def contains_point(p: HPolytope, x: Sequence[float] | np.ndarray, tol: float = SET_TOL) -> bool:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != p.dim:
        raise DimensionMismatch(f"point of size {x.size} for a {p.dim}-dimensional set")
    return bool(np.all(p.normals @ x <= p.offsets + tol))


def scale(p: HPolytope, factor: float) -> HPolytope:
    """
    factor · p (원점 포함 집합 기준: offsets × factor)

    Raises:
        ValueError: factor < 0
    """
    if factor < 0:
        raise ValueError(f"scale factor must be >= 0, got {factor}")
    f = float(factor)
    if p.has_generators:
        return replace(
            p,
            offsets=_frozen(p.offsets * f),
            center=_frozen(p.center * f),
            generators=_frozen(p.generators * f),
        )
    return replace(p, offsets=_frozen(p.offsets * f))


def translate(p: HPolytope, shift: Sequence[float] | np.ndarray) -> HPolytope:
    v = np.asarray(shift, dtype=float).ravel()
    if v.size != p.dim:
        raise DimensionMismatch(f"shift of size {v.size} for a {p.dim}-dimensional set")
    offsets = _frozen(p.offsets + p.normals @ v)
    if p.has_generators:
        return replace(p, offsets=offsets, center=_frozen(p.center + v))
    return replace(p, offsets=offsets)


def linear_map(p: HPolytope, m: np.ndarray) -> HPolytope:
    """
    box / zonotope의 정확한 선형 사상 M·p (결과는 zonotope)
    """
    M = np.atleast_2d(np.asarray(m, dtype=float))
    if M.shape[1] != p.dim:
        raise DimensionMismatch(f"map with {M.shape[1]} columns for a {p.dim}-dimensional set")
    if not p.has_generators:
        raise NotImplementedError("linear_map supports box / zonotope sets only")
    return zonotope(M @ p.center, M @ p.generators)


def linear_image_box(p: HPolytope, m: np.ndarray) -> HPolytope:
    """
    {M x : x in p}를 감싸는 축 정렬 box

    각 성분의 상/하한 = M의 행 방향 ± support
    """
    M = np.atleast_2d(np.asarray(m, dtype=float))
    if M.shape[1] != p.dim:
        raise DimensionMismatch(f"map with {M.shape[1]} columns for a {p.dim}-dimensional set")
    hi = support_many(p, M)
    lo = -support_many(p, -M)
    if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
        raise NumericalFault("linear_image_box requires a bounded set")
    return box_from_bounds(lo, hi)


def interval_hull(p: HPolytope) -> HPolytope:
    return linear_image_box(p, np.eye(p.dim))


def is_empty(p: HPolytope) -> bool:
    if p.has_generators:
        return False
    return not _lp_feasible(p.normals, p.offsets)


def boundary_samples(p: HPolytope, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    내부점에서 무작위 방향으로 ray를 쏘아 경계점을 뽑는다 (테스트 / 인증서용)

    Returns:
        (count, n) 경계점 배열
    """
    origin = p.center if p.center is not None else chebyshev_center(p)
    dirs = rng.standard_normal((count, p.dim))
    rates = dirs @ p.normals.T
    slack = p.offsets - p.normals @ origin
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rates > 1e-14, slack[None, :] / rates, np.inf)
    t = ratios.min(axis=1)
    t = np.where(np.isfinite(t), t, 0.0)
    return origin[None, :] + t[:, None] * dirs


def chebyshev_center(p: HPolytope) -> np.ndarray:
    """
    가장 큰 내접 구의 중심 (LP)
    """
    N, b = p.normals, p.offsets
    n = p.dim
    norms = np.linalg.norm(N, axis=1)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([N, norms[:, None]])
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status != 0:
        raise NumericalFault(f"chebyshev center LP failed: {res.message}")
    return np.asarray(res.x[:n])


def remove_redundant(normals: np.ndarray, offsets: np.ndarray, tol: float = SET_TOL) -> tuple[np.ndarray, np.ndarray]:
    """
    중복 / 불필요 halfspace 제거 (행마다 LP 1회)
    """
    N = np.atleast_2d(np.asarray(normals, dtype=float))
    b = np.asarray(offsets, dtype=float).ravel()
    stacked = np.round(np.hstack([N, b[:, None]]), 12)
    _, first = np.unique(stacked, axis=0, return_index=True)
    order = np.sort(first)
    N, b = N[order], b[order]

    keep = np.ones(N.shape[0], dtype=bool)
    for i in range(N.shape[0]):
        others = keep.copy()
        others[i] = False
        if not np.any(others):
            continue
        A_ub = np.vstack([N[others], N[i][None, :]])
        b_ub = np.concatenate([b[others], [b[i] + 1.0]])
        value = _lp_support(A_ub, b_ub, N[i])
        if value <= b[i] + tol:
            keep[i] = False
    return N[keep], b[keep]


def maximal_admissible_set(
    a_cl: np.ndarray,
    normals: np.ndarray,
    offsets: np.ndarray,
    *,
    max_iter: int = 200,
    tol: float = SET_TOL,
) -> Optional[HPolytope]:
    """
    x⁺ = A_cl x 아래 {F x <= g} 안의 최대 양불변 집합

    F A^k x <= g 를 차례로 추가하다가 새 행이 모두 불필요해지면 종료한다.

    Returns:
        불필요 행을 제거한 hpoly. max_iter 안에 결정되지 않으면 None
    """
    F = np.atleast_2d(np.asarray(normals, dtype=float))
    g = np.asarray(offsets, dtype=float).ravel()
    norms = np.linalg.norm(F, axis=1)
    nz = norms > 0
    F, g = F[nz] / norms[nz, None], g[nz] / norms[nz]
    if np.any(g <= 0):
        logger.debug("admissible set: origin not in the interior of the constraint set")
        return None

    H, h = F.copy(), g.copy()
    power = np.asarray(a_cl, dtype=float)
    for k in range(1, max_iter + 1):
        rows = F @ power
        new_rows = []
        new_offsets = []
        for r, c in zip(rows, g):
            if not np.any(np.abs(r) > 0):
                continue
            if _lp_support(H, h, r) > c + tol:
                new_rows.append(r)
                new_offsets.append(c)
        if not new_rows:
            logger.debug("admissible set determined at k=%d with %d rows", k, H.shape[0])
            N, b = remove_redundant(H, h, tol=tol)
            return hpoly(N, b, check=False)
        H = np.vstack([H, np.asarray(new_rows)])
        h = np.concatenate([h, np.asarray(new_offsets)])
        power = power @ a_cl
    logger.debug("admissible set not determined within %d iterations", max_iter)
    return None


def girard_reduce(G: np.ndarray, max_generators: int) -> np.ndarray:
    """
    Girard 축약: ‖g‖₁ − ‖g‖∞ 가 작은 생성자들을 축 정렬 box 하나로 감싼다.
    """
    n, p = G.shape
    if p <= max_generators:
        return G
    keep = max(max_generators - n, 0)
    score = np.abs(G).sum(axis=0) - np.abs(G).max(axis=0)
    order = np.argsort(-score, kind="stable")
    kept = np.sort(order[:keep])
    rest = order[keep:]
    boxed = np.diag(np.abs(G[:, rest]).sum(axis=1))
    return np.hstack([G[:, kept], boxed])


# -----------------------------
# Internal Helpers
# -----------------------------
def _require_same_dim(a: HPolytope, b: HPolytope, *, what: str) -> None:
    require_same_dimension(a.dim, b.dim, what=what)


def _unique_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    rows = rows[norms > 0] / norms[norms > 0, None]
    _, first = np.unique(np.round(rows, 10), axis=0, return_index=True)
    return rows[np.sort(first)]


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(np.abs(v) > _PARALLEL_TOL)
    if idx.size and v[idx[0]] < 0:
        return -v
    return v


def _merge_generators(G: np.ndarray) -> np.ndarray:
    """
    평행 생성자 병합 + 0 생성자 제거 (순서는 첫 등장 기준)
    """
    n = G.shape[0]
    scale_ref = max(float(np.abs(G).max()) if G.size else 0.0, 1.0)
    merged: list[np.ndarray] = []
    directions: list[np.ndarray] = []
    for g in G.T:
        norm = float(np.linalg.norm(g))
        if norm <= 1e-14 * scale_ref:
            continue
        g = _canonical_sign(g)
        d = g / norm
        for idx, e in enumerate(directions):
            if np.linalg.norm(d - e) <= _PARALLEL_TOL:
                merged[idx] = merged[idx] + g
                break
        else:
            directions.append(d)
            merged.append(g.copy())
    if not merged:
        return np.zeros((n, 0))
    return np.column_stack(merged)


def _zonotope_hrep(c: np.ndarray, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    zonotope facet 열거: (n-1)개 생성자 조합의 법선 + 축 방향 bounding 법선
    """
    n = c.size
    eye = np.eye(n)
    candidates = [eye, -eye]
    p = G.shape[1]
    if n >= 2 and p >= n - 1:
        found = []
        for combo in itertools.combinations(range(p), n - 1):
            M = G[:, combo]
            _, s, vt = np.linalg.svd(M.T)
            if s.size and s[-1] <= 1e-10 * max(s[0], 1e-300):
                continue
            normal = _canonical_sign(vt[-1] / np.linalg.norm(vt[-1]))
            found.append(normal)
        if found:
            F = np.asarray(found)
            candidates.extend([F, -F])
    normals = _unique_rows(np.vstack(candidates))
    offsets = normals @ c + np.abs(normals @ G).sum(axis=1)
    return normals, offsets


def _lp_feasible(A: np.ndarray, b: np.ndarray) -> bool:
    n = A.shape[1]
    res = linprog(np.zeros(n), A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
    return res.status == 0


def _lp_support(A: np.ndarray, b: np.ndarray, d: np.ndarray) -> float:
    n = A.shape[1]
    if not np.any(d):
        if not _lp_feasible(A, b):
            raise NumericalFault("support query on an empty polytope")
        return 0.0
    res = linprog(-d, A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
    if res.status == 3:
        return math.inf
    if res.status == 2:
        if _lp_feasible(A, b):
            return math.inf
        raise NumericalFault("support query on an empty polytope")
    if res.status != 0:
        raise NumericalFault(f"support LP failed: {res.message}")
    x = _polish_vertex(A, b, d, np.asarray(res.x))
    return float(d @ x)


def _polish_vertex(A: np.ndarray, b: np.ndarray, d: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    LP 해의 활성 제약 n개를 골라 정확히 다시 풀어 정점 값을 보정한다.
    """
    n = A.shape[1]
    slack = b - A @ x
    active = np.flatnonzero(slack <= _ACTIVE_TOL * (1.0 + np.abs(b)))
    if active.size < n:
        return x
    chosen: list[int] = []
    for idx in active:
        trial = chosen + [int(idx)]
        if np.linalg.matrix_rank(A[trial]) == len(trial):
            chosen = trial
        if len(chosen) == n:
            break
    if len(chosen) < n:
        return x
    try:
        polished = np.linalg.solve(A[chosen], b[chosen])
    except np.linalg.LinAlgError:
        return x
    if np.all(A @ polished <= b + 1e-9 * (1.0 + np.abs(b))) and d @ polished >= d @ x - 1e-6:
        return polished
    return x
