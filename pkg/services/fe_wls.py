"""
Weighted least squares with fixed-effect absorption and two-way clustered covariance
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg

from app.config import settings
from core.exceptions import ClusterError, ConvergenceError, NumericalError, RankDeficiencyError
from models.design import ClusterAssignment, DesignMatrix, FixedEffectGroups, WeightVector

logger = logging.getLogger(__name__)

# columns whose weighted norm falls below this multiple of the absorption
# tolerance (relative to their norm before absorption) are treated as absorbed
_ZERO_COLUMN_FACTOR = 100.0


@dataclass(frozen=True)
class AbsorbResult:
    """Design and outcome with the fixed effects partialled out"""

    design: DesignMatrix
    outcome: np.ndarray
    dropped: Tuple[str, ...]
    sweeps: int
    singletons: int


@dataclass(frozen=True)
class WlsFit:
    """Coefficients, residuals and the inverse weighted Gram matrix of a fit"""

    names: Tuple[str, ...]
    coefficients: np.ndarray
    residuals: np.ndarray
    bread: np.ndarray
    dropped: Tuple[str, ...]

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, self.coefficients.tolist()))


@dataclass(frozen=True)
class ClusterVcov:
    """Two-way clustered covariance, raw and with per-dimension G/(G-1) factors"""

    matrix: np.ndarray
    corrected: np.ndarray
    counts: Dict[str, int]
    negative: Tuple[int, ...]


def _group_means(matrix: np.ndarray, codes: np.ndarray, count: int, weights: np.ndarray) -> np.ndarray:
    weight_sums = np.bincount(codes, weights=weights, minlength=count)
    sums = np.column_stack(
        [np.bincount(codes, weights=weights * matrix[:, j], minlength=count) for j in range(matrix.shape[1])]
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(weight_sums[:, None] > 0, sums / weight_sums[:, None], 0.0)
    return means


def _demean(matrix: np.ndarray, groups: FixedEffectGroups, weights: np.ndarray, order: List[int]) -> np.ndarray:
    for d in order:
        codes = groups.codes[d]
        matrix = matrix - _group_means(matrix, codes, groups.counts[d], weights)[codes]
    return matrix


def _count_singletons(groups: FixedEffectGroups) -> int:
    singleton = np.zeros(len(groups.codes[0]) if groups.codes else 0, dtype=bool)
    for codes, count in zip(groups.codes, groups.counts):
        sizes = np.bincount(codes, minlength=count)
        singleton |= sizes[codes] == 1
    return int(singleton.sum())


def absorb(
    design: DesignMatrix,
    outcome: np.ndarray,
    groups: FixedEffectGroups,
    weights: WeightVector,
    tol: Optional[float] = None,
    max_sweeps: Optional[int] = None,
    acceleration: Optional[str] = None,
    acceleration_tol: Optional[float] = None,
) -> AbsorbResult:
    """Weighted alternating projections: demean every column within groups of each
    dimension in turn until the largest change in a sweep is below ``tol``.

    One dimension is demeaned exactly in a single pass. Columns absorbed to
    zero are dropped and reported.
    """
    tol = settings.absorb_tolerance if tol is None else tol
    max_sweeps = settings.absorb_max_sweeps if max_sweeps is None else max_sweeps
    acceleration = settings.absorb_acceleration if acceleration is None else acceleration
    acceleration_tol = settings.absorb_acceleration_tol if acceleration_tol is None else acceleration_tol
    if acceleration not in ("gk", "none"):
        raise ValueError(f"acceleration must be 'gk' or 'none', got {acceleration!r}")

    w = weights.weights
    y = np.asarray(outcome, dtype=float)
    if len(y) != design.n_rows or len(w) != design.n_rows:
        raise ValueError("design, outcome and weights must have the same number of rows")

    matrix = np.column_stack([design.values, y])
    original = matrix
    sweeps = 0
    singletons = 0

    if len(groups) == 1:
        matrix = _demean(matrix, groups, w, [0])
        sweeps = 1
        singletons = _count_singletons(groups)
    elif len(groups) > 1:
        singletons = _count_singletons(groups)
        scale = np.max(np.abs(matrix), axis=0) if len(matrix) else np.ones(matrix.shape[1])
        scale = np.where(scale > 0, scale, 1.0)
        forward = list(range(len(groups)))
        order = forward + forward[::-1]
        change = np.inf
        while sweeps < max_sweeps:
            last = matrix
            matrix = _demean(matrix, groups, w, order)
            sweeps += 1
            if acceleration == "gk":
                # Gearhart-Koshy line search in the weighted inner product; columns whose
                # step is at rounding level relative to the iterate take the plain step
                step = matrix - last
                ssr = np.sum(w[:, None] * step * step, axis=0)
                cross = np.sum(w[:, None] * last * step, axis=0)
                active = ssr > acceleration_tol * np.sum(w[:, None] * last * last, axis=0)
                with np.errstate(invalid="ignore", divide="ignore"):
                    t = np.where(active, -cross / np.where(active, ssr, 1.0), 0.0)
                boost = active & (t > 0.5)
                if np.any(boost):
                    matrix = matrix.copy()
                    matrix[:, boost] = last[:, boost] + t[boost] * step[:, boost]
            change = float(np.max(np.abs(matrix - last) / scale)) if matrix.size else 0.0
            if change < tol:
                break
        else:
            logger.error(f"Absorption stopped after {sweeps} sweeps with change {change:.3e}")
            raise ConvergenceError(sweeps, change)
        logger.debug(f"Absorbed {len(groups)} fixed-effect dimensions in {sweeps} sweeps")

    if singletons:
        logger.info(f"{singletons} record(s) sit in singleton fixed-effect groups and are absorbed to zero")

    before = np.sqrt(np.sum(w[:, None] * original[:, :-1] ** 2, axis=0))
    after = np.sqrt(np.sum(w[:, None] * matrix[:, :-1] ** 2, axis=0))
    threshold = max(settings.rank_tolerance, _ZERO_COLUMN_FACTOR * tol)
    absorbed = (before == 0) | (after <= threshold * before)
    dropped = tuple(name for name, gone in zip(design.names, absorbed) if gone)
    if dropped:
        logger.warning(f"Dropped column(s) absorbed by the fixed effects: {', '.join(dropped)}")
    keep = [j for j in range(design.n_cols) if not absorbed[j]]
    absorbed_design = DesignMatrix(tuple(design.names[j] for j in keep), matrix[:, keep])
    return AbsorbResult(absorbed_design, matrix[:, -1], dropped, sweeps, singletons)


def _independent_columns(xw: np.ndarray, rank_tol: float) -> List[int]:
    """Greedy rank selection in input order (Gram-Schmidt, reorthogonalised)"""
    basis = np.empty((xw.shape[0], 0))
    kept = []
    for j in range(xw.shape[1]):
        column = xw[:, j]
        norm = np.linalg.norm(column)
        if norm == 0:
            continue
        residual = column
        for _ in range(2):
            residual = residual - basis @ (basis.T @ residual)
        residual_norm = np.linalg.norm(residual)
        if residual_norm <= rank_tol * norm:
            continue
        kept.append(j)
        basis = np.column_stack([basis, residual / residual_norm])
    return kept


def wls_fit(
    design: DesignMatrix,
    outcome: np.ndarray,
    weights: WeightVector,
    rank_tol: Optional[float] = None,
) -> WlsFit:
    """Minimise sum_i w_i (y_i - x_i'b)^2; linearly dependent columns are dropped in input order"""
    rank_tol = settings.rank_tolerance if rank_tol is None else rank_tol
    w = weights.weights
    y = np.asarray(outcome, dtype=float)
    sw = np.sqrt(w)
    xw = design.values * sw[:, None]

    kept = _independent_columns(xw, rank_tol)
    dropped = tuple(name for j, name in enumerate(design.names) if j not in kept)
    if dropped:
        logger.warning(f"Dropped collinear column(s): {', '.join(dropped)}")
    if not kept:
        raise RankDeficiencyError("no regressor survives the rank checks")

    try:
        q, r = scipy.linalg.qr(xw[:, kept], mode="economic")
        beta = scipy.linalg.solve_triangular(r, q.T @ (y * sw))
        r_inv = scipy.linalg.solve_triangular(r, np.eye(len(kept)))
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.error(f"Error factorising the weighted design: {e}")
        raise NumericalError(str(e)) from e

    residuals = y - design.values[:, kept] @ beta
    return WlsFit(
        names=tuple(design.names[j] for j in kept),
        coefficients=beta,
        residuals=residuals,
        bread=r_inv @ r_inv.T,
        dropped=dropped,
    )


def _cluster_meat(scores: np.ndarray, codes: np.ndarray) -> np.ndarray:
    sums = pd.DataFrame(scores).groupby(codes, sort=True).sum().to_numpy()
    return sums.T @ sums


def _bread(design: DesignMatrix, weights: np.ndarray) -> np.ndarray:
    gram = design.values.T @ (design.values * weights[:, None])
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), np.eye(gram.shape[0]))
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"weighted Gram matrix is not positive definite: {e}") from e


def twoway_cluster_vcov(
    design: DesignMatrix,
    residuals: np.ndarray,
    weights: WeightVector,
    clusters: ClusterAssignment,
    bread: Optional[np.ndarray] = None,
) -> ClusterVcov:
    """Sandwich covariance V_a + V_b - V_ab on cluster-summed scores w_i x_i e_i"""
    w = weights.weights
    count_a = clusters.counts[clusters.name_a]
    count_b = clusters.counts[clusters.name_b]
    for name, count in ((clusters.name_a, count_a), (clusters.name_b, count_b)):
        if count < 2:
            raise ClusterError(f"cluster dimension {name!r} has a single cluster; covariance not identified")

    bread = _bread(design, w) if bread is None else bread
    scores = design.values * (w * np.asarray(residuals, dtype=float))[:, None]
    intersection = clusters.intersection()
    count_ab = int(intersection.max()) + 1

    meat_a = _cluster_meat(scores, clusters.codes_a)
    meat_b = _cluster_meat(scores, clusters.codes_b)
    meat_ab = _cluster_meat(scores, intersection)

    raw = bread @ (meat_a + meat_b - meat_ab) @ bread
    corrected_meat = (
        meat_a * count_a / (count_a - 1)
        + meat_b * count_b / (count_b - 1)
        - meat_ab * (count_ab / (count_ab - 1) if count_ab > 1 else 1.0)
    )
    corrected = bread @ corrected_meat @ bread
    raw = (raw + raw.T) / 2
    corrected = (corrected + corrected.T) / 2

    negative = tuple(int(j) for j in np.flatnonzero(np.diag(raw) < 0))
    if negative:
        names = ", ".join(design.names[j] for j in negative)
        logger.warning(f"Two-way clustered variance is negative for: {names}")
    return ClusterVcov(
        matrix=raw,
        corrected=corrected,
        counts={clusters.name_a: count_a, clusters.name_b: count_b, "intersection": count_ab},
        negative=negative,
    )
