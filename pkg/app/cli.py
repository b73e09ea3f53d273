# pnpdm/app/cli.py
"""
Command Line Runner

역할:
- design: 전체 서브시스템 제어기 설계 → design/controllers.json + 보고서
- simulate: closed-loop 실행 (FD + 자동 재구성) → trace.csv / events.jsonl / summary.json
- analyze: trace → detectability / 임계값 분해 / BIBO envelope → analysis.json

종료 코드:
- 0 성공, 2 설계 불가능, 3 런타임 인증서 위반, 4 잘못된 설정
- 1 그 밖의 수치 오류 (비유한 상태, g 가역성)

사용:
    python -m app.cli simulate --config vdpo --seed 0
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

from app.core.errors import CertificateViolation, ConfigError, InvertibilityFault, NumericalFault
from app.core.logging import log_action, log_error
from app.core.run_config import RunConfig, load_run_config
from app.pipeline.analyze import analyze_trace
from app.pipeline.design import DesignResult, InfeasibleDesign, TubeController, certify
from app.pipeline.engine import EngineOptions, ScenarioBundle, design_bundle, simulate
from app.storage import local_fs
from modules.pns.config import PnsConfig
from modules.pns.pipeline import build_bundle as build_pns_bundle
from modules.vdpo.config import VdpoRingConfig
from modules.vdpo.pipeline import build_bundle as build_vdpo_bundle


EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INFEASIBLE = 2
EXIT_CERTIFICATE = 3
EXIT_CONFIG = 4

Report = Dict[str, Any]

SCENARIOS: Dict[str, Tuple[Callable[..., Any], Callable[..., ScenarioBundle]]] = {
    "vdpo": (VdpoRingConfig.from_dict, build_vdpo_bundle),
    "pns": (PnsConfig.from_dict, build_pns_bundle),
}


# -----------------------------
# Scenario Helpers
# -----------------------------
def scenario_config(cfg: RunConfig) -> Any:
    """
    RunConfig → 시나리오 config dataclass

    Raises:
        ConfigError: 알 수 없는 시나리오 / 잘못된 파라미터
    """
    entry = SCENARIOS.get(cfg.scenario)
    if entry is None:
        raise ConfigError(f"Unsupported scenario: {cfg.scenario} (known: {sorted(SCENARIOS)})")
    return entry[0](cfg.params, cfg.design)


def build_scenario(cfg: RunConfig) -> ScenarioBundle:
    params = scenario_config(cfg)
    return SCENARIOS[cfg.scenario][1](params, seed=cfg.seed, steps=cfg.steps)


def _design_report(bundle: ScenarioBundle, results: Dict[int, DesignResult]) -> Report:
    subsystems: Dict[str, Any] = {}
    for i, result in sorted(results.items()):
        if isinstance(result, InfeasibleDesign):
            subsystems[str(i)] = {"feasible": False, **result.to_dict()}
            continue
        subsystems[str(i)] = {
            "feasible": True,
            "mrpi_s": result.mrpi_s,
            "mrpi_alpha": result.mrpi_alpha,
            "terminal_level": result.terminal_level,
            "certificate": certify(result, bundle.network.model(i)),
        }
    infeasible = [i for i, r in results.items() if isinstance(r, InfeasibleDesign)]
    return {"scenario": bundle.name, "feasible": not infeasible, "infeasible": sorted(infeasible), "subsystems": subsystems}


def _design(cfg: RunConfig, bundle: ScenarioBundle, directory: Path) -> Tuple[Optional[Dict[int, TubeController]], Report]:
    results = design_bundle(bundle)
    report = _design_report(bundle, results)
    report["fingerprint"] = cfg.fingerprint()
    if not report["feasible"]:
        local_fs.write_json(directory / "design" / "report.json", report)
        return None, report
    controllers = {i: r for i, r in results.items() if isinstance(r, TubeController)}
    path = local_fs.save_controllers(directory, controllers=controllers, fingerprint=cfg.fingerprint(), report=report)
    report["artifact"] = str(path)
    return controllers, report


# -----------------------------
# Commands
# -----------------------------
def cmd_design(cfg: RunConfig, *, out: Optional[str | Path] = None) -> Tuple[int, Report]:
    """
    Returns:
        (종료 코드, 서브시스템별 설계 보고서)
    """
    bundle = build_scenario(cfg)
    directory = local_fs.run_dir(scenario=cfg.scenario, seed=cfg.seed, out=out)
    controllers, report = _design(cfg, bundle, directory)
    if controllers is None:
        failing = {i: report["subsystems"][str(i)]["step"] for i in report["infeasible"]}
        log_error(message=f"design infeasible: {failing}", action="design_infeasible")
        return EXIT_INFEASIBLE, report
    return EXIT_OK, report


def cmd_simulate(cfg: RunConfig, *, out: Optional[str | Path] = None) -> Tuple[int, Report]:
    """
    저장된 설계(fingerprint 일치)를 재사용하고, 없으면 그 자리에서 설계한다.
    """
    bundle = build_scenario(cfg)
    directory = local_fs.run_dir(scenario=cfg.scenario, seed=cfg.seed, out=out)

    controllers = local_fs.load_controllers(directory, fingerprint=cfg.fingerprint())
    reused = controllers is not None
    if controllers is None:
        controllers, design_report = _design(cfg, bundle, directory)
        if controllers is None:
            return EXIT_INFEASIBLE, design_report

    options = EngineOptions(retighten=cfg.retighten, dwell_min=cfg.dwell_min)
    try:
        result = simulate(bundle, controllers, config=options, steps=cfg.steps)
    except CertificateViolation as exc:
        log_error(message=str(exc), action="certificate_violation", exc=exc)
        report = {"error": str(exc), "certificate": exc.report}
        local_fs.write_json(directory / "violation.json", report)
        return EXIT_CERTIFICATE, report

    summary = result.summary
    summary.fingerprint = cfg.fingerprint()
    local_fs.write_trace(directory / local_fs.TRACE_FILE, result.rows)
    local_fs.write_events(directory / local_fs.EVENTS_FILE, result.events)
    local_fs.write_json(directory / local_fs.SUMMARY_FILE, summary.to_dict())
    local_fs.append_history(
        record={
            "scenario": cfg.scenario,
            "seed": cfg.seed,
            "steps": cfg.steps,
            "run_dir": str(directory),
            "detections": summary.to_dict()["detections"],
            "fingerprint": summary.fingerprint,
        }
    )
    report = {"run_dir": str(directory), "reused_design": reused, "summary": summary.to_dict()}
    return EXIT_OK, report


def cmd_analyze(
    cfg: RunConfig,
    *,
    trace: Optional[str | Path] = None,
    fault_target: Optional[int] = None,
    fault_onset: Optional[int] = None,
    out: Optional[str | Path] = None,
) -> Tuple[int, Report]:
    """
    고장 대상 / 시작 시점을 주지 않으면 시나리오 설정의 고장 스크립트를 쓴다.

    Raises:
        ConfigError: trace 없음 / 고장 대상이 trace 에 없음
    """
    params = scenario_config(cfg)
    directory = local_fs.run_dir(scenario=cfg.scenario, seed=cfg.seed, out=out)
    trace_path = Path(trace) if trace is not None else directory / local_fs.TRACE_FILE
    if not trace_path.is_file():
        raise ConfigError(f"trace not found: {trace_path}")
    rows = local_fs.read_trace(trace_path)

    if fault_target is None and getattr(params, "fault_enabled", False):
        fault_target = params.fault_target
    if fault_onset is None and fault_target is not None:
        fault_onset = params.fault_onset
    if fault_target is not None and rows and fault_target not in {int(r["subsystem"]) for r in rows}:
        raise ConfigError(f"fault target {fault_target} does not appear in {trace_path}")

    report = analyze_trace(rows, lam=params.lam, fault_target=fault_target, fault_onset=fault_onset)
    report["trace"] = str(trace_path)
    local_fs.write_json(trace_path.parent / local_fs.ANALYSIS_FILE, report)
    log_action(message=f"analyzed {trace_path}", action="analyze")
    return EXIT_OK, report


# -----------------------------
# Entry Point
# -----------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pnpdm", description="Plug-and-play distributed MPC with fault detection")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("design", "simulate", "analyze"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="preset name (vdpo, pns) or YAML path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--out", default=None, help="run directory")
        p.add_argument("--retighten", action="store_true", default=None)
        p.add_argument("--dwell-min", type=int, default=None)
        if name == "analyze":
            p.add_argument("--trace", default=None)
            p.add_argument("--fault-target", type=int, default=None)
            p.add_argument("--fault-onset", type=int, default=None)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(
            args.config,
            seed=args.seed,
            steps=args.steps,
            retighten=args.retighten,
            dwell_min=args.dwell_min,
        )
        if args.command == "design":
            code, report = cmd_design(cfg, out=args.out)
        elif args.command == "simulate":
            code, report = cmd_simulate(cfg, out=args.out)
        else:
            code, report = cmd_analyze(
                cfg,
                trace=args.trace,
                fault_target=args.fault_target,
                fault_onset=args.fault_onset,
                out=args.out,
            )
    except ConfigError as exc:
        log_error(message=str(exc), action=args.command, exc=exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFault, InvertibilityFault) as exc:
        log_error(message=str(exc), action=args.command, exc=exc)
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    print(json.dumps(report, ensure_ascii=False, indent=2, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
