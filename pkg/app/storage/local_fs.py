# pnpdm/app/storage/local_fs.py
"""
Local File System Storage

역할:
- 실행 디렉터리 관리 (outputs/runs/{scenario}_seed{seed}/...)
- trace.csv / events.jsonl / summary.json / analysis.json 저장 / 로딩
- 설계 산출물(design/controllers.json, config fingerprint 포함)
- 실행 이력(history.json) 관리
- 상대 경로 ↔ 절대 경로 변환의 단일 진실(Single Source of Truth)

주의:
- trace.csv 에는 wall-clock 값이 없다. float은 repr 로 써서 같은 실행 → 같은 바이트.
- created_at 은 history.json 에만 기록
"""

from __future__ import annotations

import csv
import json
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

from app.core.config import OUTPUTS_DIR
from app.core.guards import ensure_safe_path
from app.core.metadata import EventRecord, TraceRecord
from app.pipeline.design import TubeController


TRACE_FILE = "trace.csv"
EVENTS_FILE = "events.jsonl"
SUMMARY_FILE = "summary.json"
ANALYSIS_FILE = "analysis.json"
CONTROLLERS_FILE = Path("design") / "controllers.json"

_CASTS = {"int": int, "float": float, "str": str}


# ======================================================
# Run Directories
# ======================================================
def runs_root() -> Path:
    root = OUTPUTS_DIR / "runs"
    root.mkdir(parents=True, exist_ok=True)
    return root


def run_dir(*, scenario: str, seed: int, out: Optional[str | Path] = None) -> Path:
    """
    실행 디렉터리 (out 이 없으면 outputs/runs/{scenario}_seed{seed})
    """
    if out is not None:
        path = Path(out)
    else:
        root = runs_root()
        path = ensure_safe_path(root, root / f"{scenario}_seed{seed}")
    path.mkdir(parents=True, exist_ok=True)
    return path


# ======================================================
# Trace (CSV)
# ======================================================
def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace(path: Path, rows: Iterable[TraceRecord]) -> Path:
    """
    TraceRecord → CSV (RFC-4180 quoting, 헤더 포함)
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = TraceRecord.columns()
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            raw = row.to_dict()
            writer.writerow([_cell(raw[c]) for c in columns])
    return path


def read_trace(path: Path) -> List[Dict[str, Any]]:
    """
    CSV → 타입이 복원된 dict 목록

    Raises:
        FileNotFoundError: trace 없음
        ValueError: 헤더가 TraceRecord 와 다름
    """
    casts = {f.name: _CASTS.get(str(f.type), str) for f in fields(TraceRecord)}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        unknown = set(reader.fieldnames or []) - set(casts)
        if unknown:
            raise ValueError(f"unexpected trace columns: {sorted(unknown)}")
        return [{k: casts[k](v) for k, v in raw.items()} for raw in reader]


# ======================================================
# Events / JSON Artifacts
# ======================================================
def write_events(path: Path, events: Iterable[EventRecord]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for event in events:
            f.write(json.dumps(event.to_dict(), ensure_ascii=False, sort_keys=True))
            f.write("\n")
    return path


def read_events(path: Path) -> List[Dict[str, Any]]:
    if not path.exists():
        return []
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, sort_keys=True)
    return path


def read_json(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ======================================================
# Design Artifacts
# ======================================================
def save_controllers(
    directory: Path,
    *,
    controllers: Mapping[int, TubeController],
    fingerprint: str,
    report: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    design/controllers.json 저장

    Returns:
        저장 경로
    """
    payload = {
        "fingerprint": fingerprint,
        "controllers": {str(i): c.to_dict() for i, c in sorted(controllers.items())},
        "report": report or {},
    }
    return write_json(directory / CONTROLLERS_FILE, payload)


def load_controllers(directory: Path, *, fingerprint: str) -> Optional[Dict[int, TubeController]]:
    """
    fingerprint 가 일치할 때만 저장된 제어기 반환 (없거나 다르면 None)
    """
    path = directory / CONTROLLERS_FILE
    if not path.exists():
        return None
    payload = read_json(path)
    if payload.get("fingerprint") != fingerprint:
        return None
    return {int(i): TubeController.from_dict(raw) for i, raw in payload["controllers"].items()}


# ======================================================
# History (JSON)
# ======================================================
def _history_file() -> Path:
    OUTPUTS_DIR.mkdir(parents=True, exist_ok=True)
    return OUTPUTS_DIR / "history.json"


def load_history() -> List[Dict[str, Any]]:
    history_path = _history_file()

    if not history_path.exists():
        return []

    with open(history_path, "r", encoding="utf-8") as f:
        return json.load(f)


def append_history(*, record: Dict[str, Any]) -> None:
    """
    실행 이력 추가 (자동 timestamp 포함)
    """
    history = load_history()

    record = dict(record)
    record["created_at"] = datetime.now(timezone.utc).isoformat()

    history.append(record)

    with open(_history_file(), "w", encoding="utf-8") as f:
        json.dump(history, f, ensure_ascii=False, indent=2)
