"""
Monte Carlo study of the discontinuity estimate under the three classification schemes
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit

from app.config import settings
from core.exceptions import ConformingRDError, DegenerateLawError, ReplicationError
from core.rng import philox_stream
from models.design import DesignMatrix, WeightVector
from models.schemas import AmountLawKind, ClassificationScheme, McDgpParams, McStudyResult, McSummary
from services.classify import classify_arrays, round_hmda_array
from services.fe_wls import wls_fit

logger = logging.getLogger(__name__)

SCHEMES = (
    ClassificationScheme.TRUE_AMOUNT,
    ClassificationScheme.REPORTED_AMOUNT,
    ClassificationScheme.ROUNDED_LIMIT,
)

# replications handed to one joblib task
_CHUNK = 250


def plim_beta(alpha: float, beta: float) -> float:
    """Population contrast F(alpha + beta) - F(alpha) estimated by the true-amount regression"""
    return float(expit(alpha + beta) - expit(alpha))


def _log_distances(params: McDgpParams, side_draw: np.ndarray, width_draw: np.ndarray) -> np.ndarray:
    law = params.amount_law
    if law.kind == AmountLawKind.POINT_MASS:
        return np.full(len(side_draw), law.offset)
    if law.jumbo_share is None:
        return law.offset + law.half_width * (2.0 * width_draw - 1.0)
    sign = np.where(side_draw < law.jumbo_share, 1.0, -1.0)
    return law.offset + sign * law.half_width * width_draw


def simulate_sample(params: McDgpParams, replication_index: int, allow_one_sided: bool = False) -> pd.DataFrame:
    """Draw one replication of the logit DGP; fully determined by (seed, replication_index).

    Record i takes counter positions i of three uniform blocks: amount side,
    amount width and the approval draw, so the sample does not depend on
    which worker runs it.
    """
    if not allow_one_sided and not params.amount_law.is_two_sided():
        raise DegenerateLawError(f"amount law {params.amount_law.kind.value} puts every draw on one side of the limit")
    n = params.n
    rng = philox_stream(params.seed, replication_index)
    draws = rng.random((3, n))
    distance = _log_distances(params, draws[0], draws[1])
    true_amount = params.limit * np.exp(distance)
    reported = round_hmda_array(true_amount * 1000.0)
    limit = np.full(n, params.limit)
    c_true = true_amount <= limit
    approved = draws[2] <= expit(params.alpha + params.beta * c_true)
    return pd.DataFrame({
        "true_amount": true_amount,
        "reported_amount": reported,
        "limit": limit,
        "c_true": c_true,
        "approved": approved,
    })


def run_replication(sample: pd.DataFrame, schemes: Sequence[ClassificationScheme] = SCHEMES) -> Dict[str, Dict]:
    """OLS of approval on an intercept and each scheme's conforming indicator"""
    reported = sample["reported_amount"].to_numpy()
    limit = sample["limit"].to_numpy()
    true_amount = sample["true_amount"].to_numpy()
    y = sample["approved"].to_numpy(dtype=float)
    truth = classify_arrays(ClassificationScheme.TRUE_AMOUNT, reported, limit, true_amount)
    weights = WeightVector.unit(len(sample))
    result: Dict[str, Dict] = {"beta": {}, "misclass": {}, "conforming": {}}
    for scheme in schemes:
        conforming = classify_arrays(scheme, reported, limit, true_amount)
        if conforming.all() or not conforming.any():
            raise ReplicationError(f"{scheme.value} classification has no variation")
        design = DesignMatrix(("intercept", "conforming"), np.column_stack([np.ones(len(sample)), conforming]))
        fit = wls_fit(design, y, weights)
        result["beta"][scheme] = float(fit.coefficients[1])
        result["misclass"][scheme] = float(np.mean(conforming != truth))
        result["conforming"][scheme] = int(conforming.sum())
    return result


def _run_chunk(params: McDgpParams, indices: List[int], allow_one_sided: bool) -> List[Optional[Dict]]:
    results = []
    for r in indices:
        try:
            results.append(run_replication(simulate_sample(params, r, allow_one_sided)))
        except ReplicationError as e:
            logger.warning(f"Replication {r} failed: {e}")
            results.append(None)
    return results


def _summarise(scheme: ClassificationScheme, betas: np.ndarray, reference: np.ndarray,
               shares: np.ndarray) -> McSummary:
    ok = ~np.isnan(betas) & ~np.isnan(reference)
    deviation = betas[ok] - reference[ok]
    return McSummary(
        scheme=scheme,
        mean_beta=float(np.mean(betas[ok])),
        sd_beta=float(np.std(betas[ok])),
        mean_deviation=float(np.mean(deviation)),
        mean_abs_deviation=float(np.mean(np.abs(deviation))),
        sd_deviation=float(np.std(deviation)),
        mean_misclass_share=float(np.mean(shares[ok])),
    )


class MonteCarloService:
    """Runs classification studies over replications and sample sizes"""

    def __init__(self, n_jobs: Optional[int] = None, failure_tolerance: Optional[float] = None):
        self.n_jobs = settings.n_jobs if n_jobs is None else n_jobs
        self.failure_tolerance = settings.mc_failure_tolerance if failure_tolerance is None else failure_tolerance

    def run_study(self, params: McDgpParams, s_count: Optional[int] = None,
                  allow_one_sided: bool = False) -> McStudyResult:
        """Replications 0..S-1 in parallel chunks, aggregated in replication order.

        Failed replications are stored as NaN and counted; the study fails when
        they reach ``failure_tolerance`` of S.
        """
        s_count = settings.mc_replications if s_count is None else s_count
        if s_count < 1:
            raise ValueError(f"replication count must be positive, got {s_count}")
        if s_count == 1:
            logger.warning("Study with a single replication: summaries equal that replication")

        chunks = [list(range(start, min(start + _CHUNK, s_count))) for start in range(0, s_count, _CHUNK)]
        outputs = Parallel(n_jobs=self.n_jobs)(
            delayed(_run_chunk)(params, chunk, allow_one_sided) for chunk in chunks
        )
        results = [result for chunk in outputs for result in chunk]

        failures = sum(result is None for result in results)
        if failures and failures >= self.failure_tolerance * s_count:
            message = f"{failures} of {s_count} replications failed"
            logger.error(message)
            raise ReplicationError(message)

        per_scheme, shares, conforming = {}, {}, {}
        for scheme in SCHEMES:
            per_scheme[scheme] = [np.nan if r is None else r["beta"][scheme] for r in results]
            shares[scheme] = [np.nan if r is None else r["misclass"][scheme] for r in results]
            conforming[scheme] = [-1 if r is None else r["conforming"][scheme] for r in results]

        reference = np.asarray(per_scheme[ClassificationScheme.TRUE_AMOUNT])
        summaries = {
            scheme: _summarise(scheme, np.asarray(per_scheme[scheme]), reference, np.asarray(shares[scheme]))
            for scheme in SCHEMES
        }
        logger.info(
            f"Monte Carlo limit={params.limit:g} n={params.n} S={s_count}: "
            + ", ".join(f"{s.value} mad={summaries[s].mean_abs_deviation:.5f}" for s in SCHEMES)
        )
        return McStudyResult(
            params=params,
            s_count=s_count,
            per_scheme=per_scheme,
            misclass_shares=shares,
            conforming_counts=conforming,
            summaries=summaries,
            failures=failures,
        )

    def sample_size_sweep(self, params: McDgpParams, n_grid: Optional[Sequence[int]] = None,
                          s_count: Optional[int] = None, allow_one_sided: bool = False) -> pd.DataFrame:
        """run_study at every n; one row per (n, scheme)"""
        n_grid = list(settings.mc_n_grid if n_grid is None else n_grid)
        if not n_grid:
            raise ValueError("n_grid must not be empty")
        rows = []
        for n in n_grid:
            try:
                study = self.run_study(params.model_copy(update={"n": n}), s_count, allow_one_sided)
            except ConformingRDError as e:
                logger.error(f"Sample-size sweep failed at n={n}: {e}")
                raise
            for scheme in SCHEMES:
                summary = study.summaries[scheme]
                rows.append({
                    "n": n,
                    "scheme": scheme.value,
                    "mean_abs_dev": summary.mean_abs_deviation,
                    "sd": summary.sd_deviation,
                    "mean_deviation": summary.mean_deviation,
                    "mean_beta": summary.mean_beta,
                })
        return pd.DataFrame(rows, columns=["n", "scheme", "mean_abs_dev", "sd", "mean_deviation", "mean_beta"])
