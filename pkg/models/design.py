"""
Numeric containers for the weighted least squares engine
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class WeightVector:
    """Non-negative kernel weights aligned to panel order"""

    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 1:
            raise ValueError("weights must be one-dimensional")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("weights must be finite and non-negative")
        if not np.any(weights > 0):
            raise ValueError("at least one weight must be strictly positive")
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def unit(cls, n: int) -> "WeightVector":
        return cls(np.ones(n))

    def total(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class DesignMatrix:
    """Named regressor columns, rows aligned to the panel"""

    names: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[1] != len(self.names):
            raise ValueError(f"{values.shape[1]} columns for {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise ValueError("column names must be unique")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)

    @classmethod
    def from_columns(cls, columns: Dict[str, np.ndarray], n_rows: int) -> "DesignMatrix":
        names = tuple(columns)
        values = np.column_stack([np.asarray(columns[n], dtype=float) for n in names]) if names else np.empty((n_rows, 0))
        return cls(names, values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def select(self, keep: Sequence[int]) -> "DesignMatrix":
        keep = list(keep)
        return DesignMatrix(tuple(self.names[i] for i in keep), self.values[:, keep])

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def factorize(keys: Sequence) -> Tuple[np.ndarray, int]:
    """Integer codes in order of first appearance, and the number of groups"""
    if not isinstance(keys, (np.ndarray, pd.Series)):
        keys = np.asarray(keys)
    codes, uniques = pd.factorize(keys, sort=False)
    if np.any(codes < 0):
        raise ValueError("group keys must not be missing")
    return codes.astype(np.int64), len(uniques)


@dataclass(frozen=True)
class FixedEffectGroups:
    """Fixed-effect dimensions as (name, per-record integer code) pairs"""

    names: Tuple[str, ...] = ()
    codes: Tuple[np.ndarray, ...] = ()
    counts: Tuple[int, ...] = ()

    @classmethod
    def from_keys(cls, dimensions: Dict[str, Sequence]) -> "FixedEffectGroups":
        names, codes, counts = [], [], []
        for name, keys in dimensions.items():
            code, count = factorize(keys)
            names.append(name)
            codes.append(code)
            counts.append(count)
        return cls(tuple(names), tuple(codes), tuple(counts))

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class ClusterAssignment:
    """Two per-record cluster keys (default: unit and year)"""

    name_a: str
    codes_a: np.ndarray
    name_b: str
    codes_b: np.ndarray
    counts: Dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_keys(cls, name_a: str, keys_a: Sequence, name_b: str, keys_b: Sequence) -> "ClusterAssignment":
        codes_a, count_a = factorize(keys_a)
        codes_b, count_b = factorize(keys_b)
        if len(codes_a) != len(codes_b):
            raise ValueError("cluster keys must cover the same records")
        return cls(name_a, codes_a, name_b, codes_b, {name_a: count_a, name_b: count_b})

    def intersection(self) -> np.ndarray:
        codes, _ = factorize(self.codes_a * (int(self.codes_b.max()) + 1) + self.codes_b)
        return codes

    def subset(self, mask: np.ndarray) -> "ClusterAssignment":
        return ClusterAssignment.from_keys(self.name_a, self.codes_a[mask], self.name_b, self.codes_b[mask])
