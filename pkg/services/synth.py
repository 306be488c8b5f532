"""
Seeded generator of HMDA-like event panels with planted effects and injectable anomalies
"""
import logging
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from core.exceptions import ConfigError, InjectionError, UnknownEventError
from core.rng import philox_stream
from models.panel import EventPanel
from models.schemas import (
    AmountLawKind, AnomalySpec, CalendarEntry, CorruptionClass, EventCalendar, Outcome, SynthConfig,
    dummy_column, parse_time_coefficient,
)
from services.classify import round_hmda_array
from services.validator import ValidatorService

logger = logging.getLogger(__name__)

DEFAULT_WINDOWS = [0.01, 0.02, 0.03, 0.04, 0.05, 0.10, 0.15, 0.20]


def calendar_for(config: SynthConfig) -> EventCalendar:
    return EventCalendar(entries=tuple(
        CalendarEntry(event_id=e.event_id, canonical_year=e.year, label=e.label) for e in config.events
    ))


def _skeleton(config: SynthConfig) -> pd.DataFrame:
    """One row per (unit, year, loan); units are split across events round-robin"""
    rng = philox_stream(config.seed, "treatment")
    first, last = config.years
    units, years, event_ids, treated = [], [], [], []
    for k in range(config.n_units):
        unit_id = f"U{k:05d}"
        if config.events:
            event = config.events[k % len(config.events)]
            is_treated = bool(rng.random() < event.treated_share)
            span = range(max(first, event.year - config.time_window), min(last, event.year + config.time_window) + 1)
            event_id = event.event_id
        else:
            is_treated = False
            span = range(first, last + 1)
            event_id = None
        for year in span:
            units.extend([unit_id] * config.loans_per_unit_year)
            years.extend([year] * config.loans_per_unit_year)
            event_ids.extend([event_id] * config.loans_per_unit_year)
            treated.extend([is_treated] * config.loans_per_unit_year)
    frame = pd.DataFrame({"unit_id": units, "year": np.asarray(years, dtype=np.int64)})
    frame["event_id"] = pd.Series(event_ids, dtype=object)
    frame["treated"] = np.asarray(treated, dtype=bool)
    canonical = {e.event_id: e.year for e in config.events}
    event_year = frame["event_id"].map(canonical)
    frame["time_rel"] = pd.array(frame["year"] - event_year, dtype="Int64")
    return frame


def _amounts(config: SynthConfig, limits: np.ndarray) -> np.ndarray:
    """True amounts in thousands, rounded to whole dollars"""
    n = len(limits)
    rng = philox_stream(config.seed, "amounts")
    side_draw, width_draw = rng.random(n), rng.random(n)
    law = config.amount_law
    if law.kind == AmountLawKind.POINT_MASS:
        distance = np.full(n, law.offset)
    else:
        share = config.jumbo_share_target if law.jumbo_share is None else law.jumbo_share
        sign = np.where(side_draw < share, 1.0, -1.0)
        distance = law.offset + sign * law.half_width * width_draw
    dollars = np.round(limits * np.exp(distance) * 1000.0)
    return dollars / 1000.0


def _key_effects(config: SynthConfig, name: str, keys: np.ndarray) -> np.ndarray:
    """Bounded-uniform effect drawn once per distinct key, in sorted key order"""
    uniques, codes = np.unique(keys, return_inverse=True)
    draws = philox_stream(config.seed, "fixed-effect", name).uniform(-config.fe_scale, config.fe_scale, len(uniques))
    return draws[codes]


def _planted(config: SynthConfig, outcome: Outcome, treated: np.ndarray, time_rel: np.ndarray,
             below: np.ndarray) -> np.ndarray:
    effect = np.zeros(len(treated))
    for name, size in config.planted.get(outcome, {}).items():
        t, on_below = parse_time_coefficient(name)
        active = treated & (time_rel == t)
        if on_below:
            active &= below
        effect += size * active
    return effect


def _check_probabilities(frame: pd.DataFrame, outcome: Outcome, p: np.ndarray) -> None:
    bad = np.flatnonzero((p < 0) | (p > 1))
    if len(bad):
        row = frame.iloc[bad[0]]
        message = (
            f"{outcome.value} probability {p[bad[0]]:.4f} outside [0, 1] for unit {row['unit_id']}, "
            f"year {row['year']}, event {row['event_id']} ({len(bad)} record(s) affected)"
        )
        logger.error(message)
        raise ConfigError(message)


def jumbo_share_by_window(panel: EventPanel, windows: Optional[Sequence[float]] = None) -> Dict[float, Optional[float]]:
    """Share of jumbo loans among records within |log distance| <= w, for each window w.

    Uses true amounts when every record carries one, reported amounts otherwise.
    """
    frame = panel.frame
    true_amount = frame["true_amount"].to_numpy(dtype=float)
    limits = frame["limit"].to_numpy(dtype=float)
    if not np.any(np.isnan(true_amount)):
        distance = np.log(true_amount) - np.log(limits)
    else:
        distance = panel.log_distance()
    shares: Dict[float, Optional[float]] = {}
    for w in (DEFAULT_WINDOWS if windows is None else windows):
        inside = np.abs(distance) <= w
        shares[w] = float(np.mean(distance[inside] > 0)) if inside.any() else None
    return shares


def _partner_time(t: int, window: int, reference_time: int) -> Optional[int]:
    for candidate in (t + 1, t - 1):
        if -window <= candidate <= window and candidate != reference_time:
            return candidate
    return None


class SynthService:
    """Generates a panel from one configuration and corrupts copies of it on request"""

    def __init__(self, config: SynthConfig, validator: Optional[ValidatorService] = None):
        self.config = config
        self.validator = validator or ValidatorService(window=config.time_window,
                                                       reference_time=config.reference_time)
        self.injected: Dict[str, int] = {}

    def generate_panel(self) -> EventPanel:
        """Linear-probability panel: baseline + unit/year/event effects + planted xi_t and tau_t.

        A shared uniform draw decides approval and origination, so originated
        records are always approved; securitization is drawn for originated
        records only.
        """
        config = self.config
        frame = _skeleton(config)
        n = len(frame)
        if n == 0:
            raise ConfigError("configuration generates no records; check years and events")

        limits = np.array([config.limit_for(u, y) for u, y in zip(frame["unit_id"], frame["year"])], dtype=float)
        true_amount = _amounts(config, limits)
        reported = round_hmda_array(true_amount * 1000.0)
        frame["true_amount"] = true_amount
        frame["reported_amount"] = reported
        frame["limit"] = limits

        treated = frame["treated"].to_numpy()
        time_rel = frame["time_rel"].to_numpy(dtype=float, na_value=np.nan)
        below = reported <= limits
        common = (
            _key_effects(config, "unit", frame["unit_id"].to_numpy())
            + _key_effects(config, "year", frame["year"].to_numpy())
            + _key_effects(config, "event", frame["event_id"].fillna("").to_numpy())
        )
        p_approve = config.baseline_approval + common + _planted(config, Outcome.APPROVED, treated, time_rel, below)
        p_originate = config.baseline_origination + common + _planted(
            config, Outcome.ORIGINATED, treated, time_rel, below
        )
        p_securitize = config.baseline_securitization + common + _planted(
            config, Outcome.SECURITIZED_GIVEN_ORIGINATED, treated, time_rel, below
        )
        for outcome, p in ((Outcome.APPROVED, p_approve), (Outcome.ORIGINATED, p_originate),
                           (Outcome.SECURITIZED_GIVEN_ORIGINATED, p_securitize)):
            _check_probabilities(frame, outcome, p)
        inverted = np.flatnonzero(p_originate > p_approve)
        if len(inverted):
            row = frame.iloc[inverted[0]]
            message = (
                f"origination probability exceeds approval probability for unit {row['unit_id']}, "
                f"year {row['year']} ({len(inverted)} record(s) affected)"
            )
            logger.error(message)
            raise ConfigError(message)

        rng = philox_stream(config.seed, "outcomes")
        decision, sale = rng.random(n), rng.random(n)
        originated = decision < p_originate
        frame["approved"] = decision < p_approve
        frame["originated"] = originated
        frame["securitized"] = pd.array(np.where(originated, sale < p_securitize, False), dtype="boolean")
        frame.loc[~originated, "securitized"] = pd.NA

        panel = EventPanel(frame, calendar_for(config))
        logger.info(
            f"Generated panel: {n} records, {config.n_units} units, {len(config.events)} events, "
            f"{int(treated.sum())} treated records"
        )
        return panel

    def inject_anomalies(self, panel: EventPanel, spec: AnomalySpec) -> EventPanel:
        """Corrupted copy of ``panel``; the input panel is never modified.

        Wrong-year rules rewrite time_rel so that year - time_rel equals the
        wrong year. Dummy corruptions materialise explicit time-dummy columns for
        every non-reference t in [-T, T] and then zero them (drop-all) or add the
        adjacent period (duplicate-pair) on disjoint treated records that kept
        their year. ``injected`` holds the anomaly counts the validator sees on
        the result, so a recoded record that leaves the window counts as no-dummy.
        """
        if spec.is_empty():
            self.injected = {"wrong_year": 0, "no_dummy": 0, "multiple": 0}
            return panel
        window, reference_time = self.config.time_window, self.config.reference_time
        frame = panel.frame.copy()
        time_rel = frame["time_rel"].to_numpy(dtype=float, na_value=np.nan)
        distance = panel.log_distance()
        event_ids = frame["event_id"].to_numpy()
        rewritten = np.zeros(len(frame), dtype=bool)

        for i, rule in enumerate(spec.wrong_year_rules):
            entry = panel.calendar.get(rule.event_id)
            if entry is None:
                raise UnknownEventError([rule.event_id])
            if rule.wrong_year == entry.canonical_year:
                message = f"wrong year {rule.wrong_year} equals the canonical year of {rule.event_id}"
                logger.error(message)
                raise InjectionError(message)
            eligible = (event_ids == rule.event_id) & ~rewritten
            if rule.band is not None:
                lo, hi = rule.band
                eligible &= (distance >= lo) & (distance < hi)
            candidates = np.flatnonzero(eligible)
            k = int(round(rule.share * len(candidates)))
            chosen = np.sort(philox_stream(spec.seed, "wrong-year", i).permutation(candidates)[:k])
            time_rel[chosen] = frame["year"].to_numpy()[chosen] - rule.wrong_year
            rewritten[chosen] = True
            logger.info(f"Recoded {k} of {len(candidates)} {rule.event_id} record(s) to treatment year {rule.wrong_year}")
        frame["time_rel"] = pd.array(time_rel, dtype="Int64")

        if spec.dummy_corruptions:
            treated = frame["treated"].to_numpy(dtype=bool)
            times = [t for t in range(-window, window + 1) if t != reference_time]
            for t in times:
                frame[dummy_column(t)] = (treated & (time_rel == t)).astype(np.int8)
            taken = rewritten.copy()
            for i, corruption in enumerate(spec.dummy_corruptions):
                eligible = treated & ~taken & np.isin(time_rel, times)
                if corruption.kind == CorruptionClass.DUPLICATE_PAIR:
                    eligible &= np.array([
                        not np.isnan(t) and _partner_time(int(t), window, reference_time) is not None
                        for t in time_rel
                    ])
                candidates = np.flatnonzero(eligible)
                if corruption.count > len(candidates):
                    message = f"{corruption.kind.value}: {corruption.count} requested, {len(candidates)} eligible"
                    logger.error(message)
                    raise InjectionError(message)
                chosen = np.sort(philox_stream(spec.seed, "dummy", i).permutation(candidates)[:corruption.count])
                for row in chosen:
                    t = int(time_rel[row])
                    if corruption.kind == CorruptionClass.DROP_ALL:
                        frame.at[row, dummy_column(t)] = 0
                    else:
                        frame.at[row, dummy_column(_partner_time(t, window, reference_time))] = 1
                taken[chosen] = True
                logger.info(f"Applied {corruption.kind.value} corruption to {len(chosen)} record(s)")

        corrupted = panel.with_frame(frame)
        partition = self.validator.check_time_dummy_partition(corrupted)
        self.injected = {
            "wrong_year": int(rewritten.sum()),
            "no_dummy": len(partition.no_dummy),
            "multiple": len(partition.multiple),
        }
        logger.info(
            f"Injected anomalies: {self.injected['wrong_year']} wrong-year, "
            f"{self.injected['no_dummy']} without a time dummy, {self.injected['multiple']} with several"
        )
        return corrupted
