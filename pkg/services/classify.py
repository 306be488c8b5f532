"""
HMDA rounding and the three conforming/jumbo classification schemes
"""
import logging
from typing import Optional, Union

import numpy as np

from core.exceptions import ConformingRDError
from models.schemas import ClassificationScheme, LoanRecord

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def round_hmda(amount_dollars: float) -> int:
    """Round a dollar amount to integer thousands, $500 rounding up"""
    if amount_dollars < 0 or not np.isfinite(amount_dollars):
        raise ConformingRDError(f"amount must be a finite non-negative dollar value, got {amount_dollars}")
    return int(np.floor((amount_dollars + 500.0) / 1000.0))


def round_hmda_array(amount_dollars: np.ndarray) -> np.ndarray:
    """Vectorised round_hmda"""
    amounts = np.asarray(amount_dollars, dtype=float)
    if np.any(amounts < 0) or not np.all(np.isfinite(amounts)):
        raise ConformingRDError("amounts must be finite and non-negative")
    return np.floor((amounts + 500.0) / 1000.0).astype(np.int64)


def rounded_limit(limit: ArrayLike) -> ArrayLike:
    """Limit rounded up to the next integer thousand; integer limits map to themselves"""
    return np.ceil(limit)


def classify_arrays(
    scheme: ClassificationScheme,
    reported_amount: np.ndarray,
    limit: np.ndarray,
    true_amount: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Conforming indicator (True = conforming) for aligned amount/limit arrays"""
    limit = np.asarray(limit, dtype=float)
    if scheme == ClassificationScheme.TRUE_AMOUNT:
        if true_amount is None:
            raise ConformingRDError("TrueAmount classification needs true amounts")
        true_amount = np.asarray(true_amount, dtype=float)
        if np.any(np.isnan(true_amount)):
            raise ConformingRDError("TrueAmount classification needs true amounts on every record")
        return true_amount <= limit
    reported = np.asarray(reported_amount, dtype=float)
    if scheme == ClassificationScheme.REPORTED_AMOUNT:
        return reported <= limit
    return reported <= rounded_limit(limit)


def classify(record: LoanRecord, scheme: ClassificationScheme) -> bool:
    """True when the record is conforming under ``scheme``"""
    if scheme == ClassificationScheme.TRUE_AMOUNT and record.true_amount is None:
        raise ConformingRDError("TrueAmount classification on a record without true_amount")
    true_amount = None if record.true_amount is None else np.array([record.true_amount])
    return bool(
        classify_arrays(scheme, np.array([record.reported_amount]), np.array([record.limit]), true_amount)[0]
    )


def misclassification_share(panel, scheme: ClassificationScheme) -> float:
    """Fraction of records whose ``scheme`` label differs from the true-amount label"""
    frame = panel.frame
    if len(frame) == 0:
        return 0.0
    true_amount = frame["true_amount"].to_numpy(dtype=float)
    if np.any(np.isnan(true_amount)):
        raise ConformingRDError("misclassification share needs true_amount on every record")
    truth = classify_arrays(ClassificationScheme.TRUE_AMOUNT, frame["reported_amount"], frame["limit"], true_amount)
    labels = classify_arrays(scheme, frame["reported_amount"].to_numpy(), frame["limit"].to_numpy(), true_amount)
    share = float(np.mean(labels != truth))
    logger.debug(f"Misclassification share under {scheme.value}: {share:.4f}")
    return share
