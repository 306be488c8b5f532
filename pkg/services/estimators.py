"""
Event-study, treatment-effect-curve, RD-gap and miscoding estimators
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from app.config import settings
from core.exceptions import (
    ConformingRDError, EmptySideError, IdentificationError, RankDeficiencyError,
)
from core.rng import philox_stream
from models.design import ClusterAssignment, DesignMatrix, FixedEffectGroups, WeightVector, factorize
from models.panel import EventPanel
from models.schemas import (
    CurvePoint, EstimateSet, FixedEffectDim, KernelSpec, ModelSpec, Outcome, RdGap, time_coefficient,
)
from services.fe_wls import absorb, twoway_cluster_vcov, wls_fit
from services.kernel import distance_weights, kernel_value, panel_weights
from services.validator import ValidatorService

logger = logging.getLogger(__name__)

OUTCOME_COLUMNS = {
    Outcome.APPROVED: "approved",
    Outcome.ORIGINATED: "originated",
    Outcome.SECURITIZED_GIVEN_ORIGINATED: "securitized",
}

LEFT, RIGHT = "left", "right"


def outcome_sample(panel: EventPanel, outcome: Outcome) -> Tuple[EventPanel, np.ndarray]:
    """Rows on which ``outcome`` is defined and the outcome as floats"""
    if outcome == Outcome.SECURITIZED_GIVEN_ORIGINATED:
        panel = panel.subset(panel.frame["originated"].to_numpy(dtype=bool))
    column = panel.frame[OUTCOME_COLUMNS[outcome]]
    return panel, column.to_numpy(dtype=float)


def _dimension_keys(panel: EventPanel, dim: FixedEffectDim) -> np.ndarray:
    frame = panel.frame
    if dim == FixedEffectDim.YEAR:
        return frame["year"].to_numpy()
    if dim == FixedEffectDim.UNIT:
        return frame["unit_id"].to_numpy()
    return frame["event_id"].fillna("").to_numpy()


def fixed_effect_groups(panel: EventPanel, spec: ModelSpec, below: np.ndarray, interact: bool) -> FixedEffectGroups:
    """Plain FE dimensions, or each dimension split into (key, below) groups.

    The (key, below) groups partition the plain groups, so the crossed
    dimension spans the plain one and only the crossed one is absorbed. An
    empty dimension list means a single constant group.
    """
    dimensions: Dict[str, np.ndarray] = {}
    dims = [(dim.value, _dimension_keys(panel, dim)) for dim in spec.fixed_effects]
    if not dims:
        dims = [("const", np.zeros(len(panel), dtype=np.int64))]
    for name, keys in dims:
        codes, _ = factorize(keys)
        if interact:
            dimensions[f"{name}_x_below"] = codes * 2 + below.astype(np.int64)
        else:
            dimensions[name] = codes
    return FixedEffectGroups.from_keys(dimensions)


def cluster_assignment(panel: EventPanel, spec: ModelSpec) -> ClusterAssignment:
    dim_a, dim_b = spec.cluster_dims
    return ClusterAssignment.from_keys(
        dim_a.value, _dimension_keys(panel, dim_a), dim_b.value, _dimension_keys(panel, dim_b)
    )


def _time_dummies(panel: EventPanel, spec: ModelSpec) -> Dict[int, np.ndarray]:
    treated = panel.treated()
    time_rel = panel.time_rel()
    outside = treated & ~np.isnan(time_rel) & (np.abs(time_rel) > spec.time_window)
    if outside.any():
        logger.info(
            f"{int(outside.sum())} treated record(s) outside [-{spec.time_window}, {spec.time_window}] "
            f"are retained as controls without a time dummy"
        )
    return {t: treated & (time_rel == t) for t in spec.event_times()}


def _fit(
    design: DesignMatrix,
    y: np.ndarray,
    groups: FixedEffectGroups,
    weights: WeightVector,
    clusters: ClusterAssignment,
    outcome: str,
    spec: Optional[ModelSpec],
    kernel: Optional[KernelSpec],
    notes: List[str],
) -> EstimateSet:
    absorbed = absorb(design, y, groups, weights)
    if absorbed.design.n_cols == 0:
        raise RankDeficiencyError("every regressor was absorbed by the fixed effects")
    fit = wls_fit(absorbed.design, absorbed.outcome, weights)
    kept = absorbed.design.select([absorbed.design.names.index(n) for n in fit.names])
    vcov = twoway_cluster_vcov(kept, fit.residuals, weights, clusters, bread=fit.bread)
    if absorbed.singletons:
        notes.append(f"{absorbed.singletons} record(s) in singleton fixed-effect groups")
    return EstimateSet(
        coefficients=fit.as_dict(),
        vcov=vcov.matrix.tolist(),
        vcov_corrected=vcov.corrected.tolist(),
        n_obs=design.n_rows,
        sum_weights=weights.total(),
        outcome=outcome,
        spec=spec,
        kernel=kernel,
        n_clusters=vcov.counts,
        dropped=list(absorbed.dropped + fit.dropped),
        negative_variance=[fit.names[j] for j in vcov.negative],
        notes=notes,
    )


def side_mask(panel: EventPanel, side: str) -> np.ndarray:
    below = panel.below_limit()
    return below if side == LEFT else ~below


def _one_sided(panel: EventPanel, spec: ModelSpec, delta: float, h: float, side: str) -> EstimateSet:
    data, y = outcome_sample(panel, spec.outcome)
    mask = side_mask(data, side)
    if not mask.any():
        raise EmptySideError(f"no {'conforming' if side == LEFT else 'jumbo'} records for {spec.outcome.value}")
    data, y = data.subset(mask), y[mask]
    treated = data.treated()
    if not treated.any():
        raise IdentificationError(f"no treated records on the {side} side")

    columns = {time_coefficient(t): dummy for t, dummy in _time_dummies(data, spec).items()}
    design = DesignMatrix.from_columns(columns, len(data))
    groups = fixed_effect_groups(data, spec, data.below_limit(), interact=False)
    kernel = KernelSpec(bandwidth=h, center=delta)
    weights = distance_weights(data.log_distance(), kernel)
    return _fit(design, y, groups, weights, cluster_assignment(data, spec),
                spec.outcome.value, spec.reduced(), kernel, [f"{side} side"])


def _curve_point(panel: EventPanel, spec: ModelSpec, delta: float, h: float, min_mass: float) -> List[CurvePoint]:
    side = LEFT if delta <= 0 else RIGHT
    times = spec.event_times()
    data, _ = outcome_sample(panel, spec.outcome)
    mask = side_mask(data, side)
    mass = float(np.sum(kernel_value((data.log_distance()[mask] - delta) / h))) if mask.any() else 0.0
    if mass <= 0 or mass < min_mass:
        logger.info(f"Curve point delta={delta:+.4f}: effective mass {mass:.1f} below floor {min_mass:g}")
        return [CurvePoint(delta=delta, time=t, effect=None, n_effective=mass) for t in times]
    try:
        estimates = _one_sided(panel, spec, delta, h, side)
    except (IdentificationError, RankDeficiencyError) as e:
        logger.warning(f"Curve point delta={delta:+.4f} not estimable: {e}")
        return [CurvePoint(delta=delta, time=t, effect=None, n_effective=mass) for t in times]
    return [
        CurvePoint(delta=delta, time=t, effect=estimates.coefficients.get(time_coefficient(t)), n_effective=mass)
        for t in times
    ]


def default_delta_grid(points: Optional[int] = None, half_range: Optional[float] = None) -> List[float]:
    points = settings.curve_points if points is None else points
    half_range = settings.curve_range if half_range is None else half_range
    return np.linspace(-half_range, half_range, points).tolist()


def _gap_estimates(panel: EventPanel, spec: ModelSpec, h: float) -> Dict[int, Tuple[float, float]]:
    left = _one_sided(panel, spec, 0.0, h, LEFT).coefficients
    right = _one_sided(panel, spec, 0.0, h, RIGHT).coefficients
    gaps = {}
    for t in spec.event_times():
        name = time_coefficient(t)
        if name in left and name in right:
            gaps[t] = (left[name], right[name])
    return gaps


def resample_units(panel: EventPanel, seed: int, draw: int) -> EventPanel:
    """Cluster bootstrap draw: units sampled with replacement, duplicates relabelled"""
    frame = panel.frame
    indices = frame.groupby("unit_id", sort=True).indices
    units = sorted(indices)
    rng = philox_stream(seed, "unit-bootstrap", draw)
    picks = rng.integers(0, len(units), size=len(units))
    rows, labels = [], []
    for k, pick in enumerate(picks):
        block = indices[units[pick]]
        rows.append(block)
        labels.append(np.full(len(block), f"{units[pick]}#{k}", dtype=object))
    resampled = frame.iloc[np.concatenate(rows)].copy()
    resampled["unit_id"] = np.concatenate(labels)
    return EventPanel(resampled, panel.calendar, validate=False)


def _bootstrap_gaps(panel: EventPanel, spec: ModelSpec, h: float, seed: int, draw: int) -> Dict[int, float]:
    try:
        gaps = _gap_estimates(resample_units(panel, seed, draw), spec, h)
    except ConformingRDError as e:
        logger.warning(f"Bootstrap draw {draw} failed: {e}")
        return {}
    return {t: left - right for t, (left, right) in gaps.items()}


class EstimatorService:
    """Kernel-weighted event studies, treatment-effect curves, RD gaps and the miscoding test"""

    def __init__(
        self,
        validator: Optional[ValidatorService] = None,
        n_jobs: Optional[int] = None,
        min_mass: Optional[float] = None,
        bootstrap_seed: Optional[int] = None,
    ):
        self.validator = validator or ValidatorService()
        self.n_jobs = settings.n_jobs if n_jobs is None else n_jobs
        self.min_mass = settings.curve_min_mass if min_mass is None else min_mass
        self.bootstrap_seed = settings.bootstrap_seed if bootstrap_seed is None else bootstrap_seed
        logger.info(f"Estimator service ready with n_jobs={self.n_jobs}")

    def estimate_event_study(self, panel: EventPanel, spec: Optional[ModelSpec] = None,
                             kernel: Optional[KernelSpec] = None) -> EstimateSet:
        """Kernel-weighted RD-DiD event study.

        Regressors, in order: Treated x Time_t, Below x Treated x Time_t for t in
        [-T, T] without the reference period, then Below (alpha) and
        Below x Treated (gamma). Year, event and unit fixed effects are absorbed,
        crossed with the below-limit flag when ``spec.interact_below_limit``.
        """
        spec = spec or ModelSpec()
        kernel = kernel or KernelSpec(bandwidth=settings.default_bandwidths[0])
        data, y = outcome_sample(panel, spec.outcome)
        if len(data) == 0:
            raise IdentificationError(f"no records carry the {spec.outcome.value} outcome")

        treated = data.treated()
        if treated.all() or not treated.any():
            raise IdentificationError("panel is all-treated or all-control; gamma and tau are not identified")

        below = data.below_limit()
        notes: List[str] = []
        dummies = _time_dummies(data, spec)
        columns: Dict[str, np.ndarray] = {}
        for t, dummy in dummies.items():
            columns[time_coefficient(t)] = dummy
        for t, dummy in dummies.items():
            columns[time_coefficient(t, below=True)] = dummy & below
        columns["below_limit"] = below
        columns["below_x_treated"] = below & treated

        time_rel = data.time_rel()
        event_ids = data.frame["event_id"].to_numpy()
        for event_id in sorted({e for e in event_ids if e is not None}):
            in_event = event_ids == event_id
            if not np.any(in_event & treated & (time_rel > 0)):
                note = f"event {event_id} has no treated post-period records; it contributes to the fixed effects only"
                logger.info(note)
                notes.append(note)

        design = DesignMatrix.from_columns(columns, len(data))
        groups = fixed_effect_groups(data, spec, below, interact=spec.interact_below_limit)
        weights = panel_weights(data, kernel)
        try:
            estimates = _fit(design, y, groups, weights, cluster_assignment(data, spec),
                             spec.outcome.value, spec, kernel, notes)
        except ConformingRDError as e:
            logger.error(f"Error estimating the event study at h={kernel.bandwidth:g}: {e}")
            raise
        logger.info(
            f"Event study {spec.outcome.value} h={kernel.bandwidth:g}: {estimates.n_obs} obs, "
            f"{len(estimates.coefficients)} coefficients, {len(estimates.dropped)} dropped"
        )
        return estimates

    def bandwidth_sweep(self, panel: EventPanel, spec: Optional[ModelSpec] = None,
                        bandwidths: Optional[Sequence[float]] = None) -> List[EstimateSet]:
        """One event study per bandwidth, returned in grid order"""
        spec = spec or ModelSpec()
        grid = list(settings.default_bandwidths if bandwidths is None else bandwidths)
        kernels = [KernelSpec(bandwidth=h) for h in grid]
        return Parallel(n_jobs=self.n_jobs)(delayed(self.estimate_event_study)(panel, spec, k) for k in kernels)

    def one_sided_fit(self, panel: EventPanel, spec: ModelSpec, delta: float, h: float, side: str) -> EstimateSet:
        """Reduced model (Treated x Time dummies, plain FE) on one side of the limit,
        weighted by K((distance - delta) / h)"""
        if side not in (LEFT, RIGHT):
            raise ValueError(f"side must be '{LEFT}' or '{RIGHT}', got {side!r}")
        return _one_sided(panel, spec, delta, h, side)

    def treatment_effect_curve(
        self,
        panel: EventPanel,
        spec: Optional[ModelSpec] = None,
        delta_grid: Optional[Sequence[float]] = None,
        h: float = 0.01,
        min_mass: Optional[float] = None,
    ) -> List[CurvePoint]:
        """xi_t(delta) over a grid of distances; delta <= 0 uses conforming records, delta > 0 jumbo records"""
        spec = (spec or ModelSpec()).reduced()
        grid = default_delta_grid() if delta_grid is None else list(delta_grid)
        if not grid:
            raise ValueError("delta_grid must not be empty")
        if h <= 0:
            raise ValueError("bandwidth must be positive")
        min_mass = self.min_mass if min_mass is None else min_mass
        per_delta = Parallel(n_jobs=self.n_jobs)(
            delayed(_curve_point)(panel, spec, float(delta), h, min_mass) for delta in grid
        )
        return [point for points in per_delta for point in points]

    def rd_gap(
        self,
        panel: EventPanel,
        spec: Optional[ModelSpec] = None,
        h: float = 0.01,
        bootstrap_draws: int = 0,
        seed: Optional[int] = None,
    ) -> List[RdGap]:
        """tau_RD = xi_t(0-) - xi_t(0+) from two one-sided fits at the limit.

        With ``bootstrap_draws`` > 0, standard errors come from a unit-cluster
        bootstrap seeded by ``seed``.
        """
        spec = (spec or ModelSpec()).reduced()
        gaps = _gap_estimates(panel, spec, h)
        errors: Dict[int, Optional[float]] = {t: None for t in gaps}
        if bootstrap_draws > 0:
            seed = self.bootstrap_seed if seed is None else seed
            draws = Parallel(n_jobs=self.n_jobs)(
                delayed(_bootstrap_gaps)(panel, spec, h, seed, b) for b in range(bootstrap_draws)
            )
            for t in gaps:
                values = np.array([d[t] for d in draws if t in d])
                if len(values) >= 2:
                    errors[t] = float(np.std(values, ddof=1))
            logger.info(f"RD gap bootstrap: {bootstrap_draws} draws at h={h:g}")
        return [RdGap.from_sides(t, left, right, errors[t]) for t, (left, right) in sorted(gaps.items())]

    def miscoding_sample(self, panel: EventPanel, window: Optional[int] = None,
                         flags: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Treated records within [-T, T] and the wrong-year flag restricted to them"""
        window = self.validator.window if window is None else window
        if flags is None:
            if "wrong_year" in panel.frame.columns:
                flags = panel.frame["wrong_year"].to_numpy()
            else:
                flags = self.validator.check_event_year_consistency(panel).wrong_year
        time_rel = panel.time_rel()
        mask = panel.treated() & ~np.isnan(time_rel) & (np.abs(time_rel) <= window)
        return mask, np.asarray(flags)[mask]

    def miscoding_rd_test(
        self,
        panel: EventPanel,
        poly_order: int = 1,
        window: Optional[int] = None,
        strict: bool = False,
        flags: Optional[np.ndarray] = None,
    ) -> EstimateSet:
        """Unweighted OLS of the wrong-year flag on Below plus powers of the log distance,
        two-way clustered by unit and year"""
        if poly_order not in (0, 1, 2, 3):
            raise ValueError(f"poly_order must be 0..3, got {poly_order}")
        mask, wrong_year = self.miscoding_sample(panel, window, flags)
        data = panel.subset(mask)
        if len(data) == 0:
            raise IdentificationError("no treated records within the window")
        y = wrong_year.astype(float)
        if y.min() == y.max():
            message = f"wrong-year flag is constant ({int(y[0])}) on all {len(y)} records"
            if strict:
                logger.error(message)
                raise IdentificationError(message)
            logger.warning(message)

        distance = data.log_distance()
        columns: Dict[str, np.ndarray] = {"intercept": np.ones(len(data)), "below_limit": data.below_limit()}
        for power in range(1, poly_order + 1):
            columns["log_distance" if power == 1 else f"log_distance_pow{power}"] = distance ** power
        design = DesignMatrix.from_columns(columns, len(data))
        return _fit(design, y, FixedEffectGroups(), WeightVector.unit(len(data)), cluster_assignment(data, ModelSpec()),
                    "wrong_year", None, None, [f"unweighted OLS, polynomial order {poly_order}"])
