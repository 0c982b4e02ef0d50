"""Subcommands ``collect``, ``solve-ocp``, ``mpc`` and ``verify``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

from ddsmpc.core.config import Settings
from ddsmpc.core.errors import SolverError, ValidationError
from ddsmpc.core.scenario import ScenarioConfig, describe_preset, load_scenario
from ddsmpc.dependencies import get_artifact_repository, get_solver
from ddsmpc.repositories.artifacts import FileArtifactRepository
from ddsmpc.services import experiments
from ddsmpc.services.lti_sim import DataRecord
from ddsmpc.services.mpc_loop import (
    ClosedLoopRecord,
    evaluate_performance,
    histogram_export,
)
from ddsmpc.services.ocp_builder import OcpSolution
from ddsmpc.services.verification import run_verification

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace, Settings], int]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", help="named benchmark scenario")
    parser.add_argument("--config", type=Path, help="TOML scenario file")
    parser.add_argument("--seed", type=int, help="overrides data.seed")
    parser.add_argument("--T", dest="T", type=int, help="Hankel data length")
    parser.add_argument("--out-dir", type=Path, help="defaults to DDSMPC_OUT_DIR")
    parser.add_argument("--log-level", help="defaults to DDSMPC_LOG_LEVEL")
    parser.add_argument(
        "--print-preset",
        action="store_true",
        help="print the resolved preset with value notes and exit",
    )


def _add_data_source(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--data", type=Path, help="data file from `collect` (collected if omitted)"
    )
    parser.add_argument(
        "--exact-noise",
        action="store_true",
        help="use the retained true noise instead of the estimate",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddsmpc", description="Data-driven stochastic MPC experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    collect = sub.add_parser("collect", help="record excitation data")
    _add_common(collect)
    collect.set_defaults(handler=cmd_collect)

    solve = sub.add_parser("solve-ocp", help="solve one open-loop stochastic OCP")
    _add_common(solve)
    _add_data_source(solve)
    solve.set_defaults(handler=cmd_solve_ocp)

    mpc = sub.add_parser("mpc", help="closed-loop Monte Carlo runs")
    _add_common(mpc)
    _add_data_source(mpc)
    mpc.add_argument("--runs", type=int, help="number of closed-loop runs")
    mpc.add_argument("--steps", type=int, help="closed-loop steps per run")
    mpc.add_argument(
        "--compare",
        action="store_true",
        help="also run the exact-noise baseline on the same noise sequences",
    )
    mpc.set_defaults(handler=cmd_mpc)

    verify = sub.add_parser("verify", help="run the acceptance checks")
    _add_common(verify)
    verify.set_defaults(handler=cmd_verify, preset_default="scalar-gaussian")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides.setdefault("data", {})["seed"] = args.seed
    if args.T is not None:
        overrides.setdefault("data", {})["T"] = args.T
    if getattr(args, "runs", None) is not None:
        overrides.setdefault("run", {})["monte_carlo_runs"] = args.runs
    if getattr(args, "steps", None) is not None:
        overrides.setdefault("run", {})["steps"] = args.steps
    return overrides


def _scenario(args: argparse.Namespace) -> ScenarioConfig:
    preset = args.preset
    if preset is None and args.config is None:
        preset = getattr(args, "preset_default", None)
    return load_scenario(preset, args.config, _overrides(args))


def _repository(
    args: argparse.Namespace, settings: Settings
) -> FileArtifactRepository:
    return get_artifact_repository(args.out_dir or settings.out_dir)


def _print(payload: dict[str, Any]) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, default=str)
    sys.stdout.write(text + "\n")


def _print_preset(args: argparse.Namespace) -> int:
    if args.preset is None:
        raise ValidationError("--print-preset requires --preset")
    _print(describe_preset(args.preset))
    return 0


def _data(
    args: argparse.Namespace,
    cfg: ScenarioConfig,
    settings: Settings,
    repo: FileArtifactRepository,
) -> DataRecord:
    if args.data is not None:
        data = repo.load_data_record(args.data)
    else:
        data = experiments.collect(cfg, settings=settings)
    if args.exact_noise:
        data = data.with_exact_noise()
    return data


def _require_optimal(solution: OcpSolution, what: str) -> None:
    if solution.report is None or not solution.report.ok:
        report = solution.report.summary() if solution.report is not None else None
        raise SolverError(
            f"{what} OCP did not solve to a certified optimum",
            report=report,
            details={"status": solution.status},
        )


def cmd_collect(args: argparse.Namespace, settings: Settings) -> int:
    if args.print_preset:
        return _print_preset(args)
    cfg = _scenario(args)
    repo = _repository(args, settings)
    data = experiments.collect(cfg, settings=settings)
    path = repo.save_data_record(data)
    _print({"scenario": cfg.name, "T": data.T, "data": str(path)})
    return 0


def cmd_solve_ocp(args: argparse.Namespace, settings: Settings) -> int:
    if args.print_preset:
        return _print_preset(args)
    cfg = _scenario(args)
    repo = _repository(args, settings)
    data = _data(args, cfg, settings, repo)
    solver = get_solver()

    solution = experiments.solve_data_driven(cfg, data, solver)
    _require_optimal(solution, "data-driven")
    model = experiments.solve_model_based(cfg, solver)
    _require_optimal(model, "model-based")
    gap = experiments.solution_gap(solution, model)

    paths = repo.write_solution(solution, "solution")
    paths += repo.write_solution(model, "solution_model_based")
    logger.info(
        "ocp_solved scenario=%s objective=%.6g gap_mean=%.2e gap_std=%.2e",
        cfg.name,
        solution.objective_value,
        gap.mean,
        gap.std,
    )
    _print(
        {
            "scenario": cfg.name,
            "objective": solution.objective_value,
            "model_based_objective": model.objective_value,
            "gap": {
                "mean": gap.mean,
                "std": gap.std,
                "objective_rel": gap.objective_rel,
            },
            "files": [str(p) for p in paths],
        }
    )
    return 0


def _write_runs(
    repo: FileArtifactRepository,
    records: list[ClosedLoopRecord],
    cfg: ScenarioConfig,
    prefix: str,
) -> list[Path]:
    Q, R = cfg.ocp.Q, cfg.ocp.R
    paths = [
        repo.write_closed_loop(record, f"{prefix}_{i:03d}.csv")
        for i, record in enumerate(records)
    ]
    rows = []
    for i, record in enumerate(records):
        total = evaluate_performance(record, Q, R).total if record.steps else 0.0
        rows.append([i, record.steps, total, int(record.aborted)])
    paths.append(
        repo.write_rows(
            f"{prefix}_performance.csv",
            ["run", "steps", "total_cost", "aborted"],
            rows,
        )
    )
    run_cfg = cfg.run
    if run_cfg.histogram_component is not None:
        reached = max(r.x.shape[0] for r in records) - 1
        steps = [k for k in run_cfg.histogram_steps if k <= reached]
        if steps:
            histograms = histogram_export(
                records, run_cfg.histogram_component, steps, run_cfg.histogram_bins
            )
            paths.append(
                repo.write_histograms(
                    histograms, run_cfg.histogram_component, f"{prefix}_histogram.csv"
                )
            )
    return paths


def cmd_mpc(args: argparse.Namespace, settings: Settings) -> int:
    if args.print_preset:
        return _print_preset(args)
    cfg = _scenario(args)
    repo = _repository(args, settings)
    data = _data(args, cfg, settings, repo)

    summary: dict[str, Any] = {"scenario": cfg.name, "runs": cfg.run.monte_carlo_runs}
    if args.compare:
        records, baseline, comparison = experiments.compare_closed_loop_noise(
            cfg, data, settings=settings
        )
        paths = _write_runs(repo, records, cfg, "closed_loop")
        paths += _write_runs(repo, baseline, cfg, "closed_loop_exact")
        paths.append(
            repo.write_rows(
                "cost_comparison.csv",
                ["run", "relative_gap"],
                [[i, float(g)] for i, g in enumerate(comparison.relative_gaps)],
            )
        )
        summary["mean_relative_gap"] = comparison.mean_gap
        summary["mean_abs_relative_gap"] = comparison.mean_abs_gap
    else:
        records = experiments.run_closed_loop(cfg, data, settings=settings)
        baseline = []
        paths = _write_runs(repo, records, cfg, "closed_loop")

    summary["files"] = [str(p) for p in paths]
    summary["aborted"] = sum(r.aborted for r in records + baseline)
    _print(summary)
    # Artifacts of completed steps are on disk before the failure surfaces.
    for record in records + baseline:
        record.raise_for_status()
    return 0


def cmd_verify(args: argparse.Namespace, settings: Settings) -> int:
    if args.print_preset:
        return _print_preset(args)
    cfg = _scenario(args)
    repo = _repository(args, settings)
    data = experiments.collect(cfg, settings=settings)
    report = run_verification(cfg, data, get_solver(), seed=cfg.data.seed)
    payload = report.to_dict()
    payload["scenario"] = cfg.name
    path = repo.write_json(payload, "verify_report.json")
    failed = [c.name for c in report.checks if not c.passed]
    logger.info("verify_finished passed=%s failed=%s", report.passed, failed)
    _print({"passed": report.passed, "failed": failed, "report": str(path)})
    return 0 if report.passed else 1


def dispatch(args: argparse.Namespace, settings: Settings) -> int:
    handler: Handler = args.handler
    return handler(args, settings)
