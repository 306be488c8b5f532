"""
Conforming Limit Discontinuity Toolkit
Command-line interface
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from app.config import settings
from core import reporting
from core.exceptions import ConformingRDError
from core.panel_io import dump_calendar, load_calendar, load_panel, read_json, serialize_panel
from models.panel import EventPanel
from models.schemas import AnomalySpec, KernelSpec, McDgpParams, ModelSpec, Outcome, SynthConfig
from services.estimators import EstimatorService, default_delta_grid
from services.montecarlo import MonteCarloService
from services.synth import SynthService
from services.validator import ValidatorService

logger = logging.getLogger(__name__)


def _write(path: Optional[str], text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
        logger.info(f"Wrote {path}")
    else:
        sys.stdout.write(text)


def _panel(args) -> EventPanel:
    return load_panel(Path(args.panel).read_bytes(), Path(args.calendar).read_bytes())


def _model_spec(args) -> ModelSpec:
    return ModelSpec(
        outcome=Outcome(args.outcome),
        time_window=args.window,
        reference_time=args.reference_time,
    )


def _bandwidths(text: Optional[str]) -> Optional[List[float]]:
    if not text:
        return None
    return [float(h) for h in text.split(",")]


def cmd_synth(args) -> int:
    config = SynthConfig.model_validate_json(Path(args.config).read_bytes())
    service = SynthService(config)
    panel = service.generate_panel()
    if args.anomalies:
        spec = AnomalySpec.model_validate_json(Path(args.anomalies).read_bytes())
        panel = service.inject_anomalies(panel, spec)
    Path(args.out_panel).write_bytes(serialize_panel(panel))
    Path(args.out_calendar).write_bytes(dump_calendar(panel.calendar))
    logger.info(f"Wrote {len(panel)} records to {args.out_panel}")
    return 0


def cmd_validate(args) -> int:
    panel = _panel(args)
    reference = load_calendar(Path(args.reference_calendar).read_bytes()) if args.reference_calendar else None
    validator = ValidatorService(args.window, args.reference_time, args.bin_width)
    report = validator.build_report(panel, reference)
    _write(args.out_json, reporting.report_json(report))
    _write(args.out_text, reporting.report_text(report))
    return 1 if report.has_errors else 0


def _estimators(args) -> EstimatorService:
    return EstimatorService(ValidatorService(args.window, args.reference_time))


def _write_estimates(args, results) -> None:
    _write(args.out_csv, reporting.estimates_csv(results))
    if args.out_json:
        _write(args.out_json, reporting.estimates_json(results))
    if args.text:
        sys.stdout.write(reporting.estimates_text(results))


def cmd_estimate(args) -> int:
    estimate = _estimators(args).estimate_event_study(_panel(args), _model_spec(args), KernelSpec(bandwidth=args.bandwidth))
    _write_estimates(args, [estimate])
    return 0


def cmd_sweep(args) -> int:
    results = _estimators(args).bandwidth_sweep(_panel(args), _model_spec(args), _bandwidths(args.bandwidths))
    _write_estimates(args, results)
    return 0


def cmd_curve(args) -> int:
    grid = default_delta_grid(args.points, args.range)
    points = _estimators(args).treatment_effect_curve(_panel(args), _model_spec(args), grid, args.bandwidth, args.min_mass)
    _write(args.out_csv, reporting.curve_csv(points))
    return 0


def cmd_rdgap(args) -> int:
    gaps = _estimators(args).rd_gap(_panel(args), _model_spec(args), args.bandwidth, args.bootstrap, args.seed)
    _write(args.out_csv, reporting.rd_gap_csv(gaps))
    return 0


def cmd_miscoding(args) -> int:
    estimate = _estimators(args).miscoding_rd_test(_panel(args), args.poly_order, args.window, args.strict)
    _write_estimates(args, [estimate])
    return 0


def _study_config(path: str) -> dict:
    """{"params": McDgpParams, "S": int, "scenarios": [limit, ...], "n_grid": [n, ...]}"""
    config = read_json(Path(path).read_bytes())
    defaults = {
        "n": settings.mc_sample_size,
        "alpha": settings.mc_alpha,
        "beta": settings.mc_beta,
        "amount_law": {"half_width": settings.mc_half_width},
    }
    params = McDgpParams.model_validate({**defaults, **config.get("params", {})})
    return {
        "params": params,
        "S": config.get("S"),
        "scenarios": config.get("scenarios") or [params.limit],
        "n_grid": config.get("n_grid"),
        "allow_one_sided": bool(config.get("allow_one_sided", False)),
    }


def cmd_mc(args) -> int:
    config = _study_config(args.config)
    service = MonteCarloService()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for limit in config["scenarios"]:
        params = config["params"].model_copy(update={"limit": float(limit)})
        study = service.run_study(params, config["S"], config["allow_one_sided"])
        tag = f"{float(limit):g}"
        _write(str(out_dir / f"replications_{tag}.csv"), reporting.replications_csv(study))
        _write(str(out_dir / f"summary_{tag}.csv"), reporting.summary_csv(study))
    return 0


def cmd_mc_sweep(args) -> int:
    config = _study_config(args.config)
    service = MonteCarloService()
    frames = []
    for limit in config["scenarios"]:
        params = config["params"].model_copy(update={"limit": float(limit)})
        frame = service.sample_size_sweep(params, config["n_grid"], config["S"], config["allow_one_sided"])
        frame.insert(0, "limit", float(limit))
        frames.append(frame)
    _write(args.out_csv, reporting.sweep_csv(pd.concat(frames, ignore_index=True), config["params"].seed))
    return 0


def _add_panel_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--panel", required=True, help="loan panel CSV")
    parser.add_argument("--calendar", required=True, help="event calendar JSON")
    parser.add_argument("--window", type=int, default=settings.time_window)
    parser.add_argument("--reference-time", type=int, default=settings.reference_time)


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--outcome", choices=[o.value for o in Outcome], default=Outcome.APPROVED.value)
    parser.add_argument("--out-csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conforming-rd", description=settings.app_name)
    parser.add_argument("--log-level", default=settings.log_level)
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic panel")
    p.add_argument("--config", required=True)
    p.add_argument("--anomalies")
    p.add_argument("--out-panel", required=True)
    p.add_argument("--out-calendar", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="audit a panel")
    _add_panel_args(p)
    p.add_argument("--bin-width", type=float, default=settings.histogram_bin_width)
    p.add_argument("--reference-calendar")
    p.add_argument("--out-json")
    p.add_argument("--out-text")
    p.set_defaults(func=cmd_validate)

    for name, func, help_text in (
        ("estimate", cmd_estimate, "kernel-weighted event study"),
        ("sweep", cmd_sweep, "event study over a bandwidth grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_panel_args(p)
        _add_model_args(p)
        if name == "estimate":
            p.add_argument("--bandwidth", type=float, default=settings.default_bandwidths[0])
        else:
            p.add_argument("--bandwidths", help="comma-separated, e.g. 0.01,0.05")
        p.add_argument("--out-json")
        p.add_argument("--text", action="store_true", help="print a regression table")
        p.set_defaults(func=func)

    p = sub.add_parser("curve", help="treatment effect by distance to the limit")
    _add_panel_args(p)
    _add_model_args(p)
    p.add_argument("--bandwidth", type=float, default=settings.default_bandwidths[0])
    p.add_argument("--points", type=int, default=settings.curve_points)
    p.add_argument("--range", type=float, default=settings.curve_range)
    p.add_argument("--min-mass", type=float, default=settings.curve_min_mass)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("rdgap", help="one-sided fits at the limit")
    _add_panel_args(p)
    _add_model_args(p)
    p.add_argument("--bandwidth", type=float, default=settings.default_bandwidths[0])
    p.add_argument("--bootstrap", type=int, default=settings.bootstrap_draws, help="unit-cluster bootstrap draws")
    p.add_argument("--seed", type=int, default=settings.bootstrap_seed)
    p.set_defaults(func=cmd_rdgap)

    p = sub.add_parser("miscoding", help="discontinuity in the wrong-year share")
    _add_panel_args(p)
    p.add_argument("--poly-order", type=int, choices=[0, 1, 2, 3], default=1)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out-csv")
    p.add_argument("--out-json")
    p.add_argument("--text", action="store_true")
    p.set_defaults(func=cmd_miscoding)

    p = sub.add_parser("mc", help="Monte Carlo study per limit scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("mc-sweep", help="Monte Carlo study over sample sizes")
    p.add_argument("--config", required=True)
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_mc_sweep)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv`` and run the command; returns the exit status"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    try:
        return args.func(args)
    except (ConformingRDError, ValidationError, json.JSONDecodeError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 2


def main() -> None:
    sys.exit(run())
