"""
Event panel: validated loan records plus the event calendar
"""
import logging
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.exceptions import ConformingRDError, PanelValidationError, UnknownEventError
from models.schemas import EventCalendar, LoanRecord, dummy_column

logger = logging.getLogger(__name__)

PANEL_COLUMNS = [
    "true_amount", "reported_amount", "limit", "unit_id", "year", "event_id",
    "treated", "time_rel", "approved", "originated", "securitized",
]

DUMMY_PREFIX = "time_"


def log_distance(record: LoanRecord) -> float:
    """log(reported_amount) - log(limit); negative on the conforming side"""
    if record.reported_amount <= 0 or record.limit <= 0:
        raise ConformingRDError(
            f"log distance needs positive amount and limit, got {record.reported_amount} and {record.limit}"
        )
    return float(np.log(record.reported_amount) - np.log(record.limit))


def log_distance_array(reported_amount: np.ndarray, limit: np.ndarray) -> np.ndarray:
    reported = np.asarray(reported_amount, dtype=float)
    limit = np.asarray(limit, dtype=float)
    if np.any(reported <= 0) or np.any(limit <= 0):
        raise ConformingRDError("log distance needs positive amounts and limits on every record")
    return np.log(reported) - np.log(limit)


def is_dummy_column(name: str) -> bool:
    if not name.startswith(DUMMY_PREFIX):
        return False
    suffix = name[len(DUMMY_PREFIX):]
    return len(suffix) > 1 and suffix[0] in "+-" and suffix[1:].isdigit()


def dummy_time(name: str) -> int:
    return int(name[len(DUMMY_PREFIX):])


def normalize_frame(frame: pd.DataFrame) -> pd.DataFrame:
    """Coerce a loan frame to the canonical dtypes (no invariant checks)"""
    out = pd.DataFrame(index=pd.RangeIndex(len(frame)))
    values = frame.reset_index(drop=True)
    out["true_amount"] = pd.to_numeric(values.get("true_amount", np.nan), errors="raise").astype(float)
    out["reported_amount"] = values["reported_amount"].astype(np.int64)
    out["limit"] = values["limit"].astype(float)
    out["unit_id"] = values["unit_id"].astype(str)
    out["year"] = values["year"].astype(np.int64)
    event_id = values.get("event_id", pd.Series([None] * len(values)))
    out["event_id"] = pd.Series(
        [None if (e is None or (isinstance(e, float) and np.isnan(e)) or e == "") else str(e) for e in event_id],
        dtype=object,
    )
    out["treated"] = values.get("treated", False)
    out["treated"] = out["treated"].astype(bool)
    out["time_rel"] = pd.array(values.get("time_rel", pd.Series([pd.NA] * len(values))), dtype="Int64")
    out["approved"] = values["approved"].astype(bool)
    out["originated"] = values["originated"].astype(bool)
    out["securitized"] = pd.array(values.get("securitized", pd.Series([pd.NA] * len(values))), dtype="boolean")
    for name in sorted((c for c in values.columns if is_dummy_column(c)), key=dummy_time):
        out[name] = values[name].astype(np.int8)
    return out


def frame_problems(frame: pd.DataFrame) -> List[Tuple[Optional[int], str, str]]:
    """Row-numbered invariant violations of a normalised frame"""
    problems: List[Tuple[Optional[int], str, str]] = []

    def report(mask: np.ndarray, field: str, message: str) -> None:
        for position in np.flatnonzero(mask):
            problems.append((int(position) + 1, field, message))

    true_amount = frame["true_amount"].to_numpy(dtype=float)
    reported = frame["reported_amount"].to_numpy()
    limit = frame["limit"].to_numpy(dtype=float)
    has_true = ~np.isnan(true_amount)

    report(reported < 0, "reported_amount", "must be non-negative")
    report(~(np.isfinite(limit) & (limit > 0)), "limit", "must be positive")
    report(has_true & ~(true_amount > 0), "true_amount", "must be positive")
    valid_true = has_true & (true_amount > 0) & np.isfinite(true_amount)
    rounded = np.where(valid_true, np.floor((np.where(valid_true, true_amount, 0.0) * 1000.0 + 500.0) / 1000.0), 0)
    report(valid_true & (rounded != reported), "reported_amount", "is not the HMDA rounding of true_amount")
    report(frame["unit_id"].str.len().to_numpy() == 0, "unit_id", "must not be blank")

    originated = frame["originated"].to_numpy(dtype=bool)
    has_securitized = frame["securitized"].notna().to_numpy()
    report(has_securitized != originated, "securitized", "must be present iff originated is 1")

    has_event = frame["event_id"].notna().to_numpy()
    has_time = frame["time_rel"].notna().to_numpy()
    report(has_event != has_time, "time_rel", "must be present iff event_id is present")
    report(frame["treated"].to_numpy(dtype=bool) & ~has_event, "treated", "treated records need an event_id")

    for name in (c for c in frame.columns if is_dummy_column(c)):
        column = frame[name].to_numpy()
        report((column != 0) & (column != 1), name, "time dummies must be 0 or 1")

    problems.sort(key=lambda p: (p[0] or 0, p[1]))
    return problems


class EventPanel:
    """A validated, immutable collection of loan records plus its event calendar.

    Records live in a pandas frame with canonical dtypes; ``records``
    materialises them as ``LoanRecord`` models on demand. Callers must not
    mutate ``frame``; derive new panels with ``subset`` or ``with_column``.
    """

    def __init__(self, frame: pd.DataFrame, calendar: EventCalendar, validate: bool = True):
        frame = normalize_frame(frame) if validate else frame.reset_index(drop=True)
        if validate:
            problems = frame_problems(frame)
            if problems:
                raise PanelValidationError(problems)
            known = set(calendar.event_ids)
            unknown = {e for e in frame["event_id"].dropna().unique() if e not in known}
            if unknown:
                raise UnknownEventError(unknown)
        self._frame = frame
        self.calendar = calendar

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame

    @cached_property
    def records(self) -> Tuple[LoanRecord, ...]:
        rows = self._frame[PANEL_COLUMNS].astype(object).where(self._frame[PANEL_COLUMNS].notna(), None)
        return tuple(LoanRecord.model_construct(**row) for row in rows.to_dict(orient="records"))

    def __len__(self) -> int:
        return len(self._frame)

    def log_distance(self) -> np.ndarray:
        return log_distance_array(self._frame["reported_amount"].to_numpy(), self._frame["limit"].to_numpy())

    def below_limit(self) -> np.ndarray:
        """Conforming side by reported amount; a loan exactly at the limit is conforming"""
        return self._frame["reported_amount"].to_numpy(dtype=float) <= self._frame["limit"].to_numpy(dtype=float)

    def time_rel(self) -> np.ndarray:
        """Relative time as float with NaN where absent"""
        return self._frame["time_rel"].to_numpy(dtype=float, na_value=np.nan)

    def treated(self) -> np.ndarray:
        return self._frame["treated"].to_numpy(dtype=bool)

    @property
    def dummy_columns(self) -> List[str]:
        return [c for c in self._frame.columns if is_dummy_column(c)]

    @property
    def has_explicit_dummies(self) -> bool:
        return bool(self.dummy_columns)

    def year_span(self) -> Tuple[int, int]:
        years = self._frame["year"]
        return int(years.min()), int(years.max())

    def subset(self, mask: Sequence[bool]) -> "EventPanel":
        mask = np.asarray(mask, dtype=bool)
        return EventPanel(self._frame.loc[mask].reset_index(drop=True), self.calendar, validate=False)

    def with_column(self, name: str, values: np.ndarray) -> "EventPanel":
        frame = self._frame.copy()
        frame[name] = values
        return EventPanel(frame, self.calendar, validate=False)

    def with_frame(self, frame: pd.DataFrame, validate: bool = True) -> "EventPanel":
        return EventPanel(frame, self.calendar, validate=validate)

    def explicit_dummies(self, window: int) -> np.ndarray:
        """n x (2T+1) matrix of stored dummies for t = -T..T (missing columns read as 0)"""
        matrix = np.zeros((len(self), 2 * window + 1), dtype=np.int8)
        for t in range(-window, window + 1):
            name = dummy_column(t)
            if name in self._frame.columns:
                matrix[:, t + window] = self._frame[name].to_numpy()
        return matrix
