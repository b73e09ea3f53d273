# pnpdm/tests/conftest.py
"""
공통 fixture

- 프로젝트 루트를 sys.path 에 추가
- outputs / logs 를 임시 디렉터리로 돌린다 (app 모듈 import 전에 환경변수 설정)
"""

from __future__ import annotations

import os
import sys
import tempfile
from pathlib import Path

ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

_SCRATCH = Path(tempfile.mkdtemp(prefix="pnpdm-tests-"))
os.environ.setdefault("PNPDM_OUTPUTS_DIR", str(_SCRATCH / "outputs"))
os.environ.setdefault("PNPDM_LOG_DIR", str(_SCRATCH / "logs"))

import numpy as np
import pytest


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def outputs_dir(tmp_path, monkeypatch) -> Path:
    """
    history.json / runs/ 를 테스트별 디렉터리로 격리
    """
    from app.storage import local_fs

    monkeypatch.setattr(local_fs, "OUTPUTS_DIR", tmp_path)
    return tmp_path


# -----------------------------
# Network Factories
# -----------------------------
def scalar_subsystem(
    i: int,
    parents: tuple,
    *,
    a: float = 0.5,
    coupling: float = 0.1,
    xmax: float = 5.0,
    umax: float = 2.0,
    rho: float = 0.01,
):
    """
    x⁺ = a x + u + coupling Σ x_j 인 스칼라 서브시스템과 같은 분해의 진단 모델
    """
    from app.pipeline.network import DiagSubsystemModel, LayoutEntry, SubsystemModel, resolve_map
    from app.services.polytope_service import box

    p = len(parents)
    A = np.array([[a]])
    B = np.array([[1.0]])
    W = np.full((1, p), coupling)
    X = box(np.zeros(1), xmax)
    layout = tuple((j, 0) for j in parents)
    model = SubsystemModel(
        id=i,
        A=A,
        B=B,
        g=resolve_map("unit_gain"),
        h=resolve_map("zero_drift", m=1),
        w=resolve_map("linear_coupling", matrix=W),
        X=X,
        U=box(np.zeros(1), umax),
        O=box(np.zeros(1), rho),
        parents=tuple(parents),
        psi_layout=layout,
        w_matrix=W,
    )
    diag = DiagSubsystemModel(
        id=i,
        A_tilde=A,
        B_tilde=B,
        g_tilde=model.g,
        h_tilde=model.h,
        x_layout=(LayoutEntry(i, 0),),
        psi_tilde_layout=layout,
        X_tilde=X,
        w_bar=resolve_map("linear_interval_bound", matrix=W, theta_bar=[rho] * p),
        rho_bar=np.array([rho]),
        w_tilde=model.w,
        dg_bar=0.0,
        dh_bar=0.0,
        psi_tilde_box=box(np.zeros(p), xmax) if p else None,
    )
    return model, diag


CHAIN_PARENTS = {1: (2,), 2: (1, 3), 3: (2,)}


@pytest.fixture
def chain_network():
    """
    1 ↔ 2 ↔ 3 스칼라 chain. 인자로 서브시스템 옵션을 덮어쓴다.
    """
    from app.pipeline.network import Network

    def build(**overrides):
        subsystems = {i: scalar_subsystem(i, parents, **overrides) for i, parents in CHAIN_PARENTS.items()}
        return Network(subsystems=subsystems, name="chain")

    return build
