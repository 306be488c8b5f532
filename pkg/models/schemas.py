"""
Conforming Limit Discontinuity Toolkit
Pydantic models for data validation and serialization
"""
import math
import re
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Outcome(str, Enum):
    """Outcome enumeration"""
    APPROVED = "approved"
    ORIGINATED = "originated"
    SECURITIZED_GIVEN_ORIGINATED = "securitized"


class FixedEffectDim(str, Enum):
    """Panel dimensions usable as fixed effects or cluster keys"""
    YEAR = "year"
    UNIT = "unit"
    EVENT = "event"


class KernelFamily(str, Enum):
    """Kernel family enumeration"""
    GAUSSIAN = "gaussian"


class ClassificationScheme(str, Enum):
    """Conforming/jumbo labelling rules: true amount (C*), reported amount (C^H), rounded limit (C^LL)"""
    TRUE_AMOUNT = "true"
    REPORTED_AMOUNT = "hmda"
    ROUNDED_LIMIT = "rounded_limit"


class Severity(str, Enum):
    """Finding severity enumeration"""
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"


class AmountLawKind(str, Enum):
    """Distribution families for latent loan amounts"""
    LOG_UNIFORM = "log_uniform"
    POINT_MASS = "point_mass"


class CorruptionClass(str, Enum):
    """Time-dummy corruption classes"""
    DROP_ALL = "drop-all"
    DUPLICATE_PAIR = "duplicate-pair"


_TIME_COEF = re.compile(r"^treated_x_time_([+-]\d+)(_x_below)?$")


def time_coefficient(t: int, below: bool = False) -> str:
    """Coefficient name for Treated x Time_t, optionally interacted with Below"""
    name = f"treated_x_time_{t:+d}"
    return f"{name}_x_below" if below else name


def parse_time_coefficient(name: str) -> Optional[Tuple[int, bool]]:
    """Inverse of time_coefficient; None for other coefficient names"""
    match = _TIME_COEF.match(name)
    if match is None:
        return None
    return int(match.group(1)), match.group(2) is not None


def dummy_column(t: int) -> str:
    """Name of the explicit time-dummy column for relative time t"""
    return f"time_{t:+d}"


class LoanRecord(BaseModel):
    """One mortgage application row; amounts in thousands of dollars"""

    model_config = ConfigDict(frozen=True)

    true_amount: Optional[float] = Field(None, gt=0)
    reported_amount: int = Field(..., ge=0)
    limit: float = Field(..., gt=0)
    unit_id: str = Field(..., min_length=1)
    year: int
    event_id: Optional[str] = None
    treated: bool = False
    time_rel: Optional[int] = None
    approved: bool = False
    originated: bool = False
    securitized: Optional[bool] = None

    @model_validator(mode="after")
    def _check_invariants(self) -> "LoanRecord":
        from services.classify import round_hmda

        if self.true_amount is not None and round_hmda(self.true_amount * 1000.0) != self.reported_amount:
            raise ValueError(
                f"reported_amount {self.reported_amount} is not the HMDA rounding of true_amount {self.true_amount}"
            )
        if (self.securitized is not None) != self.originated:
            raise ValueError("securitized must be present iff originated is true")
        if (self.time_rel is not None) != (self.event_id is not None):
            raise ValueError("time_rel must be present iff event_id is present")
        if self.treated and self.event_id is None:
            raise ValueError("treated records must carry an event_id")
        return self


class CalendarEntry(BaseModel):
    """One disaster event with its authoritative treatment year"""

    model_config = ConfigDict(frozen=True)

    event_id: str = Field(..., min_length=1)
    canonical_year: int
    label: str = ""


class EventCalendar(BaseModel):
    """Authoritative list of events"""

    model_config = ConfigDict(frozen=True)

    entries: Tuple[CalendarEntry, ...] = ()

    @field_validator("entries")
    @classmethod
    def _unique_ids(cls, entries: Tuple[CalendarEntry, ...]) -> Tuple[CalendarEntry, ...]:
        seen = set()
        for entry in entries:
            if entry.event_id in seen:
                raise ValueError(f"duplicate event_id {entry.event_id!r} in calendar")
            seen.add(entry.event_id)
        return entries

    @property
    def event_ids(self) -> List[str]:
        return [entry.event_id for entry in self.entries]

    def canonical_years(self) -> Dict[str, int]:
        return {entry.event_id: entry.canonical_year for entry in self.entries}

    def get(self, event_id: str) -> Optional[CalendarEntry]:
        for entry in self.entries:
            if entry.event_id == event_id:
                return entry
        return None

    def __contains__(self, event_id: object) -> bool:
        return any(entry.event_id == event_id for entry in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


class KernelSpec(BaseModel):
    """Kernel family, bandwidth h and centre delta, all in log-distance units"""

    model_config = ConfigDict(frozen=True)

    family: KernelFamily = KernelFamily.GAUSSIAN
    bandwidth: float = Field(..., gt=0)
    center: float = 0.0

    @field_validator("bandwidth", "center")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("kernel parameters must be finite")
        return value


class ModelSpec(BaseModel):
    """Outcome, fixed effects, window and clustering of an event-study fit"""

    model_config = ConfigDict(frozen=True)

    outcome: Outcome = Outcome.APPROVED
    fixed_effects: Tuple[FixedEffectDim, ...] = (FixedEffectDim.YEAR, FixedEffectDim.UNIT, FixedEffectDim.EVENT)
    interact_below_limit: bool = True
    time_window: int = Field(4, ge=1)
    reference_time: int = -1
    cluster_dims: Tuple[FixedEffectDim, FixedEffectDim] = (FixedEffectDim.UNIT, FixedEffectDim.YEAR)

    @model_validator(mode="after")
    def _check_window(self) -> "ModelSpec":
        if not -self.time_window <= self.reference_time <= self.time_window - 1:
            raise ValueError(
                f"reference_time {self.reference_time} outside [-{self.time_window}, {self.time_window - 1}]"
            )
        if self.cluster_dims[0] == self.cluster_dims[1]:
            raise ValueError("cluster_dims must be distinct")
        if len(set(self.fixed_effects)) != len(self.fixed_effects):
            raise ValueError("fixed_effects must not repeat a dimension")
        return self

    def event_times(self) -> List[int]:
        """Relative times carrying a dummy: [-T, T] without the reference period"""
        return [t for t in range(-self.time_window, self.time_window + 1) if t != self.reference_time]

    def reduced(self) -> "ModelSpec":
        """Same spec without below-limit interactions (treatment-effect curves)"""
        return self.model_copy(update={"interact_below_limit": False})


class EstimateSet(BaseModel):
    """Named coefficients with their two-way clustered covariance and fit metadata"""

    coefficients: Dict[str, float]
    vcov: List[List[float]]
    vcov_corrected: Optional[List[List[float]]] = None
    n_obs: int = Field(..., ge=0)
    sum_weights: float = Field(0.0, ge=0)
    outcome: str = ""
    spec: Optional[ModelSpec] = None
    kernel: Optional[KernelSpec] = None
    n_clusters: Dict[str, int] = {}
    dropped: List[str] = []
    negative_variance: List[str] = []
    notes: List[str] = []

    @model_validator(mode="after")
    def _check_vcov(self) -> "EstimateSet":
        k = len(self.coefficients)
        for matrix in (self.vcov, self.vcov_corrected):
            if matrix is None:
                continue
            if len(matrix) != k or any(len(row) != k for row in matrix):
                raise ValueError(f"vcov must be {k}x{k} to match the coefficients")
        return self

    @property
    def names(self) -> List[str]:
        return list(self.coefficients)

    def vcov_matrix(self, corrected: bool = False) -> np.ndarray:
        matrix = self.vcov_corrected if corrected and self.vcov_corrected is not None else self.vcov
        return np.asarray(matrix, dtype=float).reshape(len(self.coefficients), len(self.coefficients))

    def std_errors(self, corrected: bool = False) -> Dict[str, float]:
        """Standard errors; NaN where the two-way formula gave a negative variance"""
        diag = np.diag(self.vcov_matrix(corrected))
        with np.errstate(invalid="ignore"):
            ses = np.where(diag >= 0, np.sqrt(np.abs(diag)), np.nan)
        return dict(zip(self.names, ses.tolist()))

    def std_error(self, name: str, corrected: bool = False) -> float:
        return self.std_errors(corrected)[name]

    def t_stat(self, name: str, corrected: bool = False) -> float:
        se = self.std_error(name, corrected)
        if not se or math.isnan(se):
            return float("nan")
        return self.coefficients[name] / se


class CurvePoint(BaseModel):
    """Treatment effect xi_t(delta) at one distance; effect is None when the point is too sparse"""

    model_config = ConfigDict(frozen=True)

    delta: float
    time: int
    effect: Optional[float] = None
    n_effective: float = Field(..., ge=0)


class RdGap(BaseModel):
    """Discontinuity in the treatment effect at the limit for one relative time"""

    model_config = ConfigDict(frozen=True)

    time: int
    left: float
    right: float
    tau_rd: float
    std_error: Optional[float] = None

    @model_validator(mode="after")
    def _check_gap(self) -> "RdGap":
        if self.tau_rd != self.left - self.right:
            raise ValueError("tau_rd must equal left - right")
        return self

    @classmethod
    def from_sides(cls, time: int, left: float, right: float, std_error: Optional[float] = None) -> "RdGap":
        return cls(time=time, left=left, right=right, tau_rd=left - right, std_error=std_error)


class AmountLaw(BaseModel):
    """Law of the latent log distance log(L*) - log(limit).

    ``log_uniform`` draws the side first (jumbo with probability
    ``jumbo_share``) and then a distance uniform on (0, half_width) on that
    side; with ``jumbo_share`` unset the law is uniform on (-w, w).
    ``point_mass`` puts every draw at ``offset``.
    """

    model_config = ConfigDict(frozen=True)

    kind: AmountLawKind = AmountLawKind.LOG_UNIFORM
    half_width: float = Field(0.08, gt=0, le=1.0)
    jumbo_share: Optional[float] = Field(None, ge=0, le=1)
    offset: float = 0.0

    def is_two_sided(self) -> bool:
        if self.kind == AmountLawKind.POINT_MASS:
            return False
        return self.jumbo_share is None or 0.0 < self.jumbo_share < 1.0


class McDgpParams(BaseModel):
    """Logit data-generating process of the cross-sectional bunching study"""

    model_config = ConfigDict(frozen=True)

    n: int = Field(1000, ge=2)
    alpha: float = 0.2
    beta: float = 0.1
    limit: float = Field(424.1, gt=0)
    amount_law: AmountLaw = AmountLaw()
    seed: int = Field(0, ge=0, lt=2**64)


class McSummary(BaseModel):
    """Summary statistics of one scheme across replications (population variance).

    Every replication has the same n, so ``mean_misclass_share`` is also the
    pooled share over all simulated records.
    """

    scheme: ClassificationScheme
    mean_beta: float
    sd_beta: float
    mean_deviation: float
    mean_abs_deviation: float
    sd_deviation: float
    mean_misclass_share: float


class McStudyResult(BaseModel):
    """Per-replication estimates and their summaries"""

    params: McDgpParams
    s_count: int = Field(..., ge=1)
    per_scheme: Dict[ClassificationScheme, List[float]]
    misclass_shares: Dict[ClassificationScheme, List[float]]
    conforming_counts: Dict[ClassificationScheme, List[int]]
    summaries: Dict[ClassificationScheme, McSummary]
    failures: int = 0
    variance_convention: str = "population (divide by S)"

    @model_validator(mode="after")
    def _check_lengths(self) -> "McStudyResult":
        for scheme, betas in self.per_scheme.items():
            if len(betas) != self.s_count:
                raise ValueError(f"{scheme.value}: {len(betas)} estimates for S={self.s_count}")
        return self


class SynthEvent(BaseModel):
    """Event of the synthetic panel"""

    model_config = ConfigDict(frozen=True)

    event_id: str = Field(..., min_length=1)
    year: int
    treated_share: float = Field(0.5, ge=0, le=1)
    label: str = ""


class SynthConfig(BaseModel):
    """Configuration of the synthetic HMDA-like panel generator"""

    model_config = ConfigDict(frozen=True)

    n_units: int = Field(200, ge=1)
    years: Tuple[int, int] = (1995, 2016)
    events: List[SynthEvent] = []
    loans_per_unit_year: int = Field(5, ge=1)
    jumbo_share_target: float = Field(0.28, ge=0, le=1)
    amount_law: AmountLaw = AmountLaw(half_width=0.20)
    default_limit: float = Field(424.1, gt=0)
    limit_schedule: Dict[int, float] = {}
    high_cost_limits: Dict[str, float] = {}
    planted: Dict[Outcome, Dict[str, float]] = {}
    baseline_approval: float = Field(0.5, ge=0, le=1)
    baseline_origination: float = Field(0.4, ge=0, le=1)
    baseline_securitization: float = Field(0.6, ge=0, le=1)
    fe_scale: float = Field(0.05, ge=0)
    time_window: int = Field(4, ge=1)
    reference_time: int = -1
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_config(self) -> "SynthConfig":
        if self.years[0] > self.years[1]:
            raise ValueError("years must be an increasing inclusive range")
        if not -self.time_window <= self.reference_time <= self.time_window - 1:
            raise ValueError("reference_time outside the window")
        if len({event.event_id for event in self.events}) != len(self.events):
            raise ValueError("event ids must be unique")
        for outcome, effects in self.planted.items():
            for name in effects:
                parsed = parse_time_coefficient(name)
                if parsed is None:
                    raise ValueError(f"{outcome.value}: unknown planted coefficient {name!r}")
                t, _ = parsed
                if t == self.reference_time or abs(t) > self.time_window:
                    raise ValueError(f"{outcome.value}: planted {name!r} outside the window or at the reference time")
        return self

    def limit_for(self, unit_id: str, year: int) -> float:
        if unit_id in self.high_cost_limits:
            return self.high_cost_limits[unit_id]
        return self.limit_schedule.get(year, self.default_limit)


class WrongYearRule(BaseModel):
    """Recode a share of one event's records to a wrong treatment year"""

    model_config = ConfigDict(frozen=True)

    event_id: str
    wrong_year: int
    share: float = Field(..., ge=0, le=1)
    band: Optional[Tuple[float, float]] = None

    @field_validator("band")
    @classmethod
    def _check_band(cls, band: Optional[Tuple[float, float]]) -> Optional[Tuple[float, float]]:
        if band is None:
            return band
        lo, hi = band
        if not -0.10 <= lo < hi <= 0.10:
            raise ValueError("band must satisfy -0.10 <= lo < hi <= 0.10")
        return band


class DummyCorruption(BaseModel):
    """Materialise explicit time dummies and corrupt ``count`` treated records"""

    model_config = ConfigDict(frozen=True)

    kind: CorruptionClass
    count: int = Field(..., ge=0)


class AnomalySpec(BaseModel):
    """Anomalies to inject into a clean panel"""

    model_config = ConfigDict(frozen=True)

    wrong_year_rules: List[WrongYearRule] = []
    dummy_corruptions: List[DummyCorruption] = []
    seed: int = Field(0, ge=0, lt=2**64)

    def is_empty(self) -> bool:
        return not self.wrong_year_rules and not any(c.count for c in self.dummy_corruptions)


class Finding(BaseModel):
    """One validator rule outcome"""

    rule_id: str
    severity: Severity
    count: int = Field(..., ge=0)
    message: str = ""
    per_event: Dict[str, int] = {}
    rows: List[int] = []

    @model_validator(mode="after")
    def _check_count(self) -> "Finding":
        if self.rows and self.count != len(self.rows):
            raise ValueError("count must equal the number of listed rows")
        return self


class BinnedShare(BaseModel):
    """Wrong-year share in one half-open distance bin [lo, hi)"""

    lo: float
    hi: float
    n: int = Field(..., ge=0)
    flagged: int = Field(..., ge=0)
    share: Optional[float] = Field(None, ge=0, le=1)


class AnomalyReport(BaseModel):
    """Machine-readable validator output"""

    findings: List[Finding] = []
    histogram: Dict[int, int] = {}
    reference_period_zero: int = 0
    binned_shares: List[BinnedShare] = []
    notes: List[str] = []

    @property
    def has_errors(self) -> bool:
        return any(f.severity == Severity.ERROR and f.count > 0 for f in self.findings)
