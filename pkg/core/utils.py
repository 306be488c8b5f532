"""
Conforming Limit Discontinuity Toolkit
Utility functions and helpers
"""
import math
from typing import Optional

from scipy.stats import norm

STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.10, "*"))


def p_value(t_stat: float) -> float:
    """Two-sided normal p-value"""
    if t_stat is None or math.isnan(t_stat):
        return float("nan")
    return float(2.0 * norm.sf(abs(t_stat)))


def significance_stars(t_stat: float) -> str:
    """*** p<0.01, ** p<0.05, * p<0.1"""
    p = p_value(t_stat)
    for level, stars in STAR_LEVELS:
        if p < level:
            return stars
    return ""


def format_number(value: Optional[float], digits: int = 4) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.{digits}f}"


def format_bandwidth(h: Optional[float]) -> str:
    """Bandwidth as a percentage of the log distance, e.g. 0.01 -> '1%'"""
    if h is None:
        return "-"
    return f"{h * 100:g}%"
