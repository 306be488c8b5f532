"""
Pytest configuration and fixtures
"""
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import pytest

from models.panel import EventPanel
from models.schemas import (
    AmountLaw, CalendarEntry, EventCalendar, Outcome, SynthConfig, SynthEvent,
)
from services.estimators import EstimatorService
from services.montecarlo import MonteCarloService
from services.synth import SynthService
from services.validator import ValidatorService

CSV_HEADER = (
    "true_amount,reported_amount,limit,unit_id,year,event_id,treated,time_rel,approved,originated,securitized\n"
)


def loan_frame(
    reported: Sequence[int],
    limit,
    true_amount: Optional[Sequence[float]] = None,
    unit_id=None,
    year=2005,
    event_id=None,
    treated=False,
    time_rel=None,
    approved=False,
) -> pd.DataFrame:
    """Minimal loan frame; scalars broadcast over the rows, outcomes default to not originated"""
    n = len(reported)

    def column(value, dtype=None):
        if isinstance(value, (list, tuple, np.ndarray, pd.Series)):
            return pd.Series(list(value), dtype=dtype)
        return pd.Series([value] * n, dtype=dtype)

    return pd.DataFrame({
        "true_amount": column(np.nan if true_amount is None else true_amount, float),
        "reported_amount": column(reported, np.int64),
        "limit": column(limit, float),
        "unit_id": column([f"Z{i % 40:03d}" for i in range(n)] if unit_id is None else unit_id, object),
        "year": column(year, np.int64),
        "event_id": column(event_id, object),
        "treated": column(treated, bool),
        "time_rel": column(time_rel, object),
        "approved": column(approved, bool),
        "originated": column(False, bool),
        "securitized": column(None, object),
    })


def generate(config: SynthConfig) -> EventPanel:
    return SynthService(config).generate_panel()


def small_config(**overrides) -> SynthConfig:
    """Single-event panel small enough for quick structural tests"""
    values = dict(
        n_units=120,
        years=(2001, 2009),
        events=[SynthEvent(event_id="E2005", year=2005, treated_share=0.5, label="storm")],
        loans_per_unit_year=4,
        seed=11,
    )
    values.update(overrides)
    return SynthConfig(**values)


def low_noise_config(planted=None, baseline_approval: float = 0.05, **overrides) -> SynthConfig:
    """Low baseline rates keep Bernoulli noise small so planted effects are recovered tightly"""
    values = dict(
        n_units=1500,
        years=(2001, 2009),
        events=[SynthEvent(event_id="E2005", year=2005, treated_share=0.5)],
        loans_per_unit_year=6,
        baseline_approval=baseline_approval,
        baseline_origination=0.04,
        baseline_securitization=0.5,
        fe_scale=0.01,
        planted=planted or {},
        seed=7,
    )
    values.update(overrides)
    return SynthConfig(**values)


MULTI_EVENT_YEARS = (1999, 2002, 2005, 2008, 2011)


def multi_event_config(planted=None, seed: int = 0, **overrides) -> SynthConfig:
    """Five staggered events over 1995-2016, enough year and unit clusters for two-way inference"""
    values = dict(
        n_units=2800,
        years=(1995, 2016),
        events=[SynthEvent(event_id=f"E{year}", year=year, treated_share=0.5) for year in MULTI_EVENT_YEARS],
        loans_per_unit_year=4,
        jumbo_share_target=0.5,
        amount_law=AmountLaw(half_width=0.03),
        baseline_approval=0.015,
        baseline_origination=0.015,
        baseline_securitization=0.5,
        fe_scale=0.004,
        planted=planted or {},
        seed=seed,
    )
    values.update(overrides)
    return SynthConfig(**values)


@pytest.fixture
def calendar():
    """Two-event calendar"""
    return EventCalendar(entries=(
        CalendarEntry(event_id="KAT", canonical_year=2005, label="Katrina"),
        CalendarEntry(event_id="IKE", canonical_year=2008, label="Ike"),
    ))


@pytest.fixture
def calendar_bytes():
    return (
        b'[{"event_id": "KAT", "canonical_year": 2005, "label": "Katrina"},'
        b' {"event_id": "IKE", "canonical_year": 2008, "label": "Ike"}]'
    )


@pytest.fixture
def three_row_csv():
    return (
        CSV_HEADER
        + "424.3,424,424.1,Z001,2006,KAT,1,1,1,1,1\n"
        + "466.0,466,424.1,Z002,2006,KAT,0,1,1,0,\n"
        + ",300,417.0,Z003,2004,,0,,0,0,\n"
    ).encode("utf-8")


@pytest.fixture(scope="session")
def clean_panel() -> EventPanel:
    """Seeded synthetic panel without anomalies"""
    return generate(small_config())


@pytest.fixture(scope="session")
def planted_panel() -> EventPanel:
    """Low-noise panel with tau_3 = +0.06 on approval"""
    return generate(low_noise_config({Outcome.APPROVED: {"treated_x_time_+3_x_below": 0.06}}))


@pytest.fixture(scope="session")
def null_panel() -> EventPanel:
    """Low-noise panel with no planted effects"""
    return generate(low_noise_config(seed=8))


@pytest.fixture
def validator() -> ValidatorService:
    return ValidatorService()


@pytest.fixture
def estimator() -> EstimatorService:
    return EstimatorService()


@pytest.fixture
def mc_service() -> MonteCarloService:
    return MonteCarloService()
