"""
Panel-integrity audits: treatment-year miscoding, time-dummy partition,
distance-correlated miscoding and event-calendar coverage
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from app.config import settings
from core.exceptions import UnknownEventError
from models.panel import EventPanel
from models.schemas import AnomalyReport, BinnedShare, CalendarEntry, EventCalendar, Finding, Severity, dummy_column

logger = logging.getLogger(__name__)

POST_PERIODS = (1, 2, 3, 4)


@dataclass(frozen=True)
class EventYearCheck:
    """Coded-year table, per-record wrong-year flags and per-event shares"""

    table: pd.DataFrame
    wrong_year: np.ndarray
    per_event_counts: Dict[str, int]
    per_event_shares: Dict[str, Optional[float]]

    @property
    def count(self) -> int:
        return int(self.wrong_year.sum())

    def rows(self) -> List[int]:
        return [int(i) + 1 for i in np.flatnonzero(self.wrong_year)]


@dataclass(frozen=True)
class PartitionCheck:
    """Distribution of active time dummies over treated records and the violations"""

    histogram: Dict[int, int]
    no_dummy: List[int]
    multiple: List[int]
    reference_zero: int
    explicit: bool
    no_dummy_by_event: Dict[str, int] = field(default_factory=dict)
    multiple_by_event: Dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class CoverageCheck:
    """Reference-calendar events missing from the panel"""

    missing: List[CalendarEntry]
    out_of_span: List[CalendarEntry]
    span: tuple


def _implied_years(panel: EventPanel) -> np.ndarray:
    return panel.frame["year"].to_numpy(dtype=float) - panel.time_rel()


def derived_dummies(panel: EventPanel, window: int, reference_time: int) -> np.ndarray:
    """n x (2T+1) dummies from time_rel; the reference column stays zero"""
    treated = panel.treated()
    time_rel = panel.time_rel()
    matrix = np.zeros((len(panel), 2 * window + 1), dtype=np.int8)
    for t in range(-window, window + 1):
        if t != reference_time:
            matrix[:, t + window] = treated & (time_rel == t)
    return matrix


class ValidatorService:
    """Audits a panel against its event calendar and the time-dummy layout"""

    def __init__(
        self,
        window: Optional[int] = None,
        reference_time: Optional[int] = None,
        bin_width: Optional[float] = None,
        histogram_range: Optional[float] = None,
    ):
        self.window = settings.time_window if window is None else window
        self.reference_time = settings.reference_time if reference_time is None else reference_time
        self.bin_width = settings.histogram_bin_width if bin_width is None else bin_width
        self.histogram_range = settings.histogram_range if histogram_range is None else histogram_range

    def check_event_year_consistency(self, panel: EventPanel) -> EventYearCheck:
        """Flag records whose implied treatment year (year - time_rel) differs from the canonical year"""
        frame = panel.frame
        canonical = panel.calendar.canonical_years()
        event_ids = frame["event_id"].to_numpy()
        unknown = {e for e in event_ids if e is not None and e not in canonical}
        if unknown:
            raise UnknownEventError(unknown)

        implied = _implied_years(panel)
        expected = np.array([np.nan if e is None else canonical[e] for e in event_ids], dtype=float)
        has_event = ~np.isnan(expected)
        wrong_year = has_event & (implied != expected)

        time_rel = panel.time_rel()
        rows = []
        counts: Dict[str, int] = {}
        shares: Dict[str, Optional[float]] = {}
        for entry in panel.calendar.entries:
            in_event = event_ids == entry.event_id
            counts[entry.event_id] = int(wrong_year[in_event].sum())
            total = int(in_event.sum())
            shares[entry.event_id] = counts[entry.event_id] / total if total else None
            if not total:
                rows.append({"event_id": entry.event_id, "label": entry.label, "coded_year": None,
                             "canonical": False, "no_observation": True,
                             **{f"t+{k}": 0 for k in POST_PERIODS}})
                continue
            for year in np.unique(implied[in_event]):
                coded = in_event & (implied == year)
                rows.append({
                    "event_id": entry.event_id,
                    "label": entry.label,
                    "coded_year": int(year),
                    "canonical": int(year) == entry.canonical_year,
                    "no_observation": False,
                    **{f"t+{k}": int(np.sum(coded & (time_rel == k))) for k in POST_PERIODS},
                })
        table = pd.DataFrame(rows, columns=["event_id", "label", "coded_year", "canonical", "no_observation"]
                             + [f"t+{k}" for k in POST_PERIODS])
        flagged = int(wrong_year.sum())
        if flagged:
            logger.warning(f"{flagged} record(s) carry a treatment year that contradicts the calendar")
        return EventYearCheck(table, wrong_year, counts, shares)

    def check_time_dummy_partition(self, panel: EventPanel) -> PartitionCheck:
        """Histogram of the number of active time dummies over treated records.

        Stored dummy columns are audited as-is; otherwise dummies are derived from
        time_rel. A zero sum at the reference period is compliant.
        """
        window, reference_time = self.window, self.reference_time
        explicit = panel.has_explicit_dummies
        matrix = panel.explicit_dummies(window) if explicit else derived_dummies(panel, window, reference_time)
        extra = [c for c in panel.dummy_columns if c not in {dummy_column(t) for t in range(-window, window + 1)}]
        if extra:
            logger.info(f"Ignoring dummy column(s) outside the window: {', '.join(extra)}")

        treated = panel.treated()
        sums = matrix.sum(axis=1)[treated]
        positions = np.flatnonzero(treated)
        at_reference = panel.time_rel()[treated] == reference_time
        values, counts = np.unique(sums, return_counts=True)
        histogram = {int(v): int(c) for v, c in zip(values, counts)}

        no_dummy = (sums == 0) & ~at_reference
        multiple = sums >= 2
        event_ids = panel.frame["event_id"].to_numpy()[treated]

        def by_event(mask: np.ndarray) -> Dict[str, int]:
            ids, n = np.unique(event_ids[mask].astype(str), return_counts=True)
            return {str(i): int(c) for i, c in zip(ids, n)}

        check = PartitionCheck(
            histogram=histogram,
            no_dummy=[int(p) + 1 for p in positions[no_dummy]],
            multiple=[int(p) + 1 for p in positions[multiple]],
            reference_zero=int(np.sum((sums == 0) & at_reference)),
            explicit=explicit,
            no_dummy_by_event=by_event(no_dummy),
            multiple_by_event=by_event(multiple),
        )
        if check.no_dummy or check.multiple:
            logger.warning(
                f"Time-dummy partition: {len(check.no_dummy)} treated record(s) without a dummy, "
                f"{len(check.multiple)} with several"
            )
        return check

    def wrong_year_share_by_distance(
        self,
        panel: EventPanel,
        flags: Optional[np.ndarray] = None,
        bin_width: Optional[float] = None,
    ) -> List[BinnedShare]:
        """Wrong-year share in half-open bins [lo + k w, lo + (k+1) w) of the log distance"""
        bin_width = self.bin_width if bin_width is None else bin_width
        lo, hi = -self.histogram_range, self.histogram_range
        if bin_width <= 0:
            raise ValueError(f"bin_width must be positive, got {bin_width}")
        n_bins = int(round((hi - lo) / bin_width))
        if n_bins < 1 or not np.isclose(n_bins * bin_width, hi - lo):
            raise ValueError(f"bin_width {bin_width} does not divide [{lo}, {hi}]")
        if flags is None:
            flags = self.check_event_year_consistency(panel).wrong_year
        flags = np.asarray(flags, dtype=bool)

        edges = np.linspace(lo, hi, n_bins + 1)
        distance = panel.log_distance()
        index = np.searchsorted(edges, distance, side="right") - 1
        inside = (index >= 0) & (index < n_bins)
        totals = np.bincount(index[inside], minlength=n_bins)
        flagged = np.bincount(index[inside], weights=flags[inside].astype(float), minlength=n_bins).astype(np.int64)
        return [
            BinnedShare(
                lo=float(edges[k]),
                hi=float(edges[k + 1]),
                n=int(totals[k]),
                flagged=int(flagged[k]),
                share=float(flagged[k] / totals[k]) if totals[k] else None,
            )
            for k in range(n_bins)
        ]

    def check_event_coverage(self, panel: EventPanel, reference_calendar: EventCalendar) -> CoverageCheck:
        """Reference events within the panel's year span that no record refers to"""
        observed = set(panel.frame["event_id"].dropna().unique())
        first, last = panel.year_span()
        missing, out_of_span = [], []
        for entry in reference_calendar.entries:
            if entry.event_id in observed:
                continue
            if first <= entry.canonical_year <= last:
                missing.append(entry)
            else:
                out_of_span.append(entry)
        if missing:
            logger.warning(f"Events missing from the panel: {', '.join(e.event_id for e in missing)}")
        return CoverageCheck(missing, out_of_span, (first, last))

    def build_report(self, panel: EventPanel, reference_calendar: Optional[EventCalendar] = None) -> AnomalyReport:
        """Run every audit and collect the findings, ordered by rule_id"""
        years = self.check_event_year_consistency(panel)
        partition = self.check_time_dummy_partition(panel)
        binned = self.wrong_year_share_by_distance(panel, years.wrong_year)
        coverage = self.check_event_coverage(panel, reference_calendar or panel.calendar)

        findings = [
            Finding(
                rule_id="event_year.wrong_year",
                severity=Severity.ERROR,
                count=years.count,
                message="implied treatment year (year - time_rel) differs from the calendar",
                per_event={k: v for k, v in years.per_event_counts.items() if v},
                rows=years.rows(),
            ),
            Finding(
                rule_id="time_dummy.multiple",
                severity=Severity.ERROR,
                count=len(partition.multiple),
                message="treated records with more than one active time dummy",
                per_event=partition.multiple_by_event,
                rows=partition.multiple,
            ),
            Finding(
                rule_id="time_dummy.none",
                severity=Severity.WARNING,
                count=len(partition.no_dummy),
                message="treated records outside the reference period with no active time dummy",
                per_event=partition.no_dummy_by_event,
                rows=partition.no_dummy,
            ),
            Finding(
                rule_id="coverage.missing_event",
                severity=Severity.WARNING,
                count=len(coverage.missing),
                message=", ".join(e.event_id for e in coverage.missing),
            ),
            Finding(
                rule_id="coverage.out_of_span",
                severity=Severity.INFO,
                count=len(coverage.out_of_span),
                message=", ".join(e.event_id for e in coverage.out_of_span),
            ),
        ]
        notes = []
        empty_events = [k for k, share in years.per_event_shares.items() if share is None]
        if empty_events:
            notes.append(f"no observation for event(s): {', '.join(empty_events)}")
        for event_id, share in years.per_event_shares.items():
            if share:
                notes.append(f"{event_id}: {share:.1%} of records carry a wrong treatment year")
        for entry in coverage.out_of_span:
            notes.append(
                f"{entry.event_id} ({entry.canonical_year}) lies outside the panel span "
                f"{coverage.span[0]}-{coverage.span[1]}; not reported as missing"
            )
        if partition.explicit:
            notes.append("time dummies audited from stored columns")

        report = AnomalyReport(
            findings=sorted(findings, key=lambda f: f.rule_id),
            histogram=partition.histogram,
            reference_period_zero=partition.reference_zero,
            binned_shares=binned,
            notes=notes,
        )
        errors = sum(f.count for f in report.findings if f.severity == Severity.ERROR)
        logger.info(f"Validation finished: {errors} error(s)")
        return report
