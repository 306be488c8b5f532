"""
CSV and JSON codecs for loan panels and event calendars
"""
import io
import json
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import TypeAdapter

from core.exceptions import EmptyInputError, PanelValidationError
from models.panel import PANEL_COLUMNS, EventPanel, dummy_time, is_dummy_column
from models.schemas import CalendarEntry, EventCalendar

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = [
    "reported_amount", "limit", "unit_id", "year", "treated", "approved", "originated",
]
OPTIONAL_COLUMNS = ["true_amount", "event_id", "time_rel", "securitized"]

_calendar_adapter = TypeAdapter(List[CalendarEntry])

Problem = Tuple[Optional[int], str, str]


def _parse_number(raw: pd.Series, field: str, problems: List[Problem], required: bool,
                  integer: bool = False) -> pd.Series:
    blank = raw.str.strip() == ""
    parsed = pd.to_numeric(raw.where(~blank, None), errors="coerce")
    bad = ~blank & parsed.isna()
    if required:
        bad |= blank
    if integer:
        bad |= parsed.notna() & (parsed != np.floor(parsed.fillna(0)))
    for position in np.flatnonzero(bad.to_numpy()):
        value = raw.iloc[position]
        problems.append((int(position) + 1, field, f"cannot parse {value!r} as {'an integer' if integer else 'a number'}"))
    return parsed


def _parse_flag(raw: pd.Series, field: str, problems: List[Problem], required: bool) -> pd.Series:
    stripped = raw.str.strip()
    allowed = {"0", "1"} if required else {"0", "1", ""}
    for position in np.flatnonzero(~stripped.isin(allowed).to_numpy()):
        problems.append((int(position) + 1, field, f"expected 0/1{'' if required else ' or blank'}, got {raw.iloc[position]!r}"))
    return stripped.map({"1": True, "0": False, "": None})


def load_calendar(source: bytes) -> EventCalendar:
    """Parse a JSON array of {event_id, canonical_year, label}"""
    if not source or not source.strip():
        raise EmptyInputError("calendar source is empty")
    entries = _calendar_adapter.validate_json(source)
    return EventCalendar(entries=tuple(entries))


def dump_calendar(calendar: EventCalendar) -> bytes:
    payload = [entry.model_dump() for entry in calendar.entries]
    return json.dumps(payload, indent=2).encode("utf-8")


def load_panel(source: bytes, calendar: bytes) -> EventPanel:
    """Parse the loan CSV and calendar JSON into a validated EventPanel"""
    event_calendar = load_calendar(calendar)
    if not source or not source.strip():
        raise EmptyInputError("panel source is empty")
    try:
        raw = pd.read_csv(io.BytesIO(source), dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise EmptyInputError(f"panel source has no header: {e}") from e
    if raw.empty:
        raise EmptyInputError("panel source has a header but no rows")

    raw.columns = [c.strip() for c in raw.columns]
    missing = [c for c in REQUIRED_COLUMNS if c not in raw.columns]
    if missing:
        raise PanelValidationError([(None, column, "missing required column") for column in missing])
    for column in OPTIONAL_COLUMNS:
        if column not in raw.columns:
            raw[column] = ""

    problems: List[Problem] = []
    frame = pd.DataFrame(index=raw.index)
    frame["true_amount"] = _parse_number(raw["true_amount"], "true_amount", problems, required=False)
    frame["reported_amount"] = _parse_number(raw["reported_amount"], "reported_amount", problems, True, integer=True)
    frame["limit"] = _parse_number(raw["limit"], "limit", problems, required=True)
    frame["unit_id"] = raw["unit_id"].str.strip()
    frame["year"] = _parse_number(raw["year"], "year", problems, required=True, integer=True)
    frame["event_id"] = raw["event_id"].str.strip()
    frame["treated"] = _parse_flag(raw["treated"], "treated", problems, required=True)
    frame["time_rel"] = _parse_number(raw["time_rel"], "time_rel", problems, required=False, integer=True)
    frame["approved"] = _parse_flag(raw["approved"], "approved", problems, required=True)
    frame["originated"] = _parse_flag(raw["originated"], "originated", problems, required=True)
    frame["securitized"] = _parse_flag(raw["securitized"], "securitized", problems, required=False)
    for column in sorted((c for c in raw.columns if is_dummy_column(c)), key=dummy_time):
        frame[column] = _parse_flag(raw[column], column, problems, required=True)

    if problems:
        problems.sort(key=lambda p: (p[0] or 0, p[1]))
        logger.error(f"Rejected {len({p[0] for p in problems})} malformed row(s) while loading the panel")
        raise PanelValidationError(problems)

    frame["reported_amount"] = frame["reported_amount"].astype(np.int64)
    frame["year"] = frame["year"].astype(np.int64)
    try:
        panel = EventPanel(frame, event_calendar)
    except PanelValidationError as e:
        logger.error(f"Rejected rows while loading the panel: {e}")
        raise
    logger.info(f"Loaded panel with {len(panel)} records and {len(event_calendar)} calendar events")
    return panel


def panel_to_frame(panel: EventPanel) -> pd.DataFrame:
    """String-ready frame in the CSV schema: booleans as 0/1, blanks for missing"""
    frame = panel.frame
    out = pd.DataFrame(index=frame.index)
    out["true_amount"] = frame["true_amount"]
    out["reported_amount"] = frame["reported_amount"]
    out["limit"] = frame["limit"]
    out["unit_id"] = frame["unit_id"]
    out["year"] = frame["year"]
    out["event_id"] = frame["event_id"]
    out["treated"] = frame["treated"].astype(int)
    out["time_rel"] = frame["time_rel"]
    out["approved"] = frame["approved"].astype(int)
    out["originated"] = frame["originated"].astype(int)
    out["securitized"] = frame["securitized"].astype("Int64")
    for column in panel.dummy_columns:
        out[column] = frame[column].astype(int)
    return out[PANEL_COLUMNS + panel.dummy_columns]


def serialize_panel(panel: EventPanel) -> bytes:
    buffer = io.StringIO()
    panel_to_frame(panel).to_csv(buffer, index=False, na_rep="")
    return buffer.getvalue().encode("utf-8")


def read_json(source: bytes) -> Dict:
    if not source or not source.strip():
        raise EmptyInputError("JSON source is empty")
    return json.loads(source)
