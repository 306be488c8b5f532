"""
CSV, JSON and plain-text renderings of estimates, curves, Monte Carlo studies and validator reports
"""
import io
import json
import logging
from typing import Iterable, List, Sequence

import pandas as pd

from app.config import settings
from core.utils import format_bandwidth, format_number, significance_stars
from models.schemas import AnomalyReport, CurvePoint, EstimateSet, McStudyResult, RdGap

logger = logging.getLogger(__name__)

ESTIMATE_COLUMNS = [
    "name", "estimate", "std_error", "std_error_corrected", "t_stat", "n_obs", "bandwidth", "outcome",
]


def _csv(frame: pd.DataFrame, header_comment: str = "") -> str:
    buffer = io.StringIO()
    if header_comment:
        buffer.write(f"# {header_comment}\n")
    frame.to_csv(buffer, index=False, na_rep="", float_format="%.10g")
    return buffer.getvalue()


def estimates_frame(estimates: Iterable[EstimateSet]) -> pd.DataFrame:
    """One row per coefficient; t statistics use the corrected errors when cluster_correction is set"""
    rows = []
    for estimate in estimates:
        raw = estimate.std_errors()
        corrected = estimate.std_errors(corrected=True)
        bandwidth = estimate.kernel.bandwidth if estimate.kernel else None
        for name, value in estimate.coefficients.items():
            rows.append({
                "name": name,
                "estimate": value,
                "std_error": raw[name],
                "std_error_corrected": corrected[name],
                "t_stat": estimate.t_stat(name, corrected=settings.cluster_correction),
                "n_obs": estimate.n_obs,
                "bandwidth": bandwidth,
                "outcome": estimate.outcome,
            })
    return pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)


def estimates_csv(estimates: Iterable[EstimateSet]) -> str:
    return _csv(estimates_frame(estimates))


def estimates_json(estimates: Sequence[EstimateSet]) -> str:
    payload = [json.loads(e.model_dump_json()) for e in estimates]
    return json.dumps(payload, indent=2)


def estimates_text(estimates: Sequence[EstimateSet]) -> str:
    """Regression table: one block per fit, stars from the two-sided normal p-value"""
    lines: List[str] = []
    for estimate in estimates:
        bandwidth = format_bandwidth(estimate.kernel.bandwidth if estimate.kernel else None)
        lines.append(f"{estimate.outcome}  h={bandwidth}  N={estimate.n_obs}")
        corrected = settings.cluster_correction
        errors = estimate.std_errors(corrected=corrected)
        for name, value in estimate.coefficients.items():
            stars = significance_stars(estimate.t_stat(name, corrected=corrected))
            lines.append(f"  {name:<32} {format_number(value):>10}{stars:<3} ({format_number(errors[name])})")
        for name in estimate.dropped:
            lines.append(f"  {name:<32} {'dropped':>10}")
        lines.append("")
    lines.append("*** p<0.01, ** p<0.05, * p<0.1; standard errors two-way clustered")
    return "\n".join(lines) + "\n"


def curve_csv(points: Iterable[CurvePoint]) -> str:
    frame = pd.DataFrame(
        [p.model_dump() for p in points], columns=["delta", "time", "effect", "n_effective"]
    )
    return _csv(frame)


def rd_gap_csv(gaps: Iterable[RdGap]) -> str:
    frame = pd.DataFrame([g.model_dump() for g in gaps], columns=["time", "left", "right", "tau_rd", "std_error"])
    return _csv(frame)


def replications_csv(study: McStudyResult) -> str:
    """Per-replication rows (replication, scheme, beta_hat, misclass_share, conforming)"""
    rows = []
    for scheme, betas in study.per_scheme.items():
        shares = study.misclass_shares[scheme]
        counts = study.conforming_counts[scheme]
        for r, beta in enumerate(betas):
            rows.append({"replication": r, "scheme": scheme.value, "beta_hat": beta,
                         "misclass_share": shares[r], "conforming": counts[r]})
    frame = pd.DataFrame(rows).sort_values(["replication", "scheme"], kind="mergesort")
    return _csv(frame, _study_header(study))


def summary_csv(study: McStudyResult) -> str:
    frame = pd.DataFrame([s.model_dump(mode="json") for s in study.summaries.values()])
    return _csv(frame, _study_header(study))


def _study_header(study: McStudyResult) -> str:
    p = study.params
    return (
        f"seed={p.seed} n={p.n} S={study.s_count} alpha={p.alpha} beta={p.beta} limit={p.limit} "
        f"failures={study.failures} variance={study.variance_convention}"
    )


def sweep_csv(frame: pd.DataFrame, seed: int) -> str:
    return _csv(frame, f"seed={seed}")


def report_json(report: AnomalyReport) -> str:
    return report.model_dump_json(indent=2)


def report_text(report: AnomalyReport) -> str:
    """Plain-text validator summary"""
    lines = ["rule_id                      severity  count"]
    for finding in report.findings:
        lines.append(f"{finding.rule_id:<28} {finding.severity.value:<9} {finding.count}")
        for event_id, count in sorted(finding.per_event.items()):
            lines.append(f"    {event_id}: {count}")
    lines.append("")
    lines.append("time-dummy sum over treated records:")
    for total, count in sorted(report.histogram.items()):
        lines.append(f"    {total}: {count}")
    lines.append(f"    (reference period with sum 0: {report.reference_period_zero})")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"
