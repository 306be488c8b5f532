"""
Error hierarchy shared by the loaders, estimators, simulators and validator
"""
from typing import Iterable, List, Optional, Tuple


class ConformingRDError(ValueError):
    """Base class for every domain error raised by this package"""


class EmptyInputError(ConformingRDError):
    """Raised when a CSV or JSON source carries no data rows"""


class PanelValidationError(ConformingRDError):
    """Raised when loan rows violate the schema or the record invariants.

    ``problems`` holds ``(row, field, message)`` triples. ``row`` is the
    1-based data row number (header excluded) or ``None`` for schema-level
    problems such as a missing column.
    """

    def __init__(self, problems: Iterable[Tuple[Optional[int], str, str]]):
        self.problems: List[Tuple[Optional[int], str, str]] = list(problems)
        head = "; ".join(
            f"row {row}: {field}: {message}" if row is not None else f"{field}: {message}"
            for row, field, message in self.problems[:10]
        )
        more = f" (+{len(self.problems) - 10} more)" if len(self.problems) > 10 else ""
        super().__init__(f"{len(self.problems)} invalid row(s): {head}{more}")

    @property
    def rows(self) -> List[int]:
        return sorted({row for row, _, _ in self.problems if row is not None})


class UnknownEventError(ConformingRDError):
    """Raised when records reference events missing from the calendar"""

    def __init__(self, event_ids: Iterable[str]):
        self.event_ids = sorted(set(event_ids))
        super().__init__(f"Unknown event_id(s) not in calendar: {', '.join(self.event_ids)}")


class ConfigError(ConformingRDError):
    """Raised when a generator or study configuration cannot be honoured"""


class IdentificationError(ConformingRDError):
    """Raised when the requested coefficients are not identified by the sample"""


class EmptySideError(IdentificationError):
    """Raised when one side of the conforming limit holds no records"""


class ConvergenceError(ConformingRDError):
    """Raised when fixed-effect absorption does not converge"""

    def __init__(self, sweeps: int, residual: float):
        self.sweeps = sweeps
        self.residual = residual
        super().__init__(f"Absorption did not converge after {sweeps} sweeps (max change {residual:.3e})")


class RankDeficiencyError(ConformingRDError):
    """Raised when no regressor survives the rank checks"""


class NumericalError(ConformingRDError):
    """Raised when a matrix factorization fails"""


class ClusterError(ConformingRDError):
    """Raised when a clustering dimension cannot identify the covariance"""


class ReplicationError(ConformingRDError):
    """Raised when a Monte Carlo replication cannot be estimated"""


class DegenerateLawError(ConformingRDError):
    """Raised when an amount law places all its mass on one side of the limit"""


class InjectionError(ConformingRDError):
    """Raised when an anomaly request exceeds the eligible records"""
