"""
Kernel weights for the distance-weighted regressions
"""
import logging

import numpy as np

from core.exceptions import ConformingRDError
from models.design import WeightVector
from models.schemas import KernelFamily, KernelSpec

logger = logging.getLogger(__name__)


def kernel_value(u):
    """Unnormalised Gaussian kernel exp(-u^2/2); peak 1 at u=0. Accepts scalars or arrays."""
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ConformingRDError("kernel argument must be finite")
    value = np.exp(-0.5 * u * u)
    return float(value) if value.ndim == 0 else value


def distance_weights(distance: np.ndarray, kernel: KernelSpec) -> WeightVector:
    """K((distance - delta) / h) for aligned log distances"""
    if kernel.family != KernelFamily.GAUSSIAN:
        raise ConformingRDError(f"unsupported kernel family {kernel.family}")
    weights = kernel_value((np.asarray(distance, dtype=float) - kernel.center) / kernel.bandwidth)
    return WeightVector(np.atleast_1d(weights))


def panel_weights(panel, kernel: KernelSpec) -> WeightVector:
    """Per-record kernel weight in panel order"""
    weights = distance_weights(panel.log_distance(), kernel)
    logger.debug(
        f"Kernel weights h={kernel.bandwidth:g} delta={kernel.center:g}: effective mass {weights.total():.1f}"
    )
    return weights
