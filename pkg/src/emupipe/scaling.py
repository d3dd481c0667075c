"""Min-max scaling of predictor and target tables.

The scaler is fitted once, on pooled training rows only, and then applied
unchanged to every split.  Columns that are constant in the training data
carry no information at training time; they are flagged and transform to 0.0
(their inverse restores the training constant).  Out-of-range values in later
splits are scaled by the same affine map, never clipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyData


@dataclass
class ColumnScaler:
    """Per-column affine map x -> (x - min) / (max - min) from training rows."""

    names: tuple[str, ...]
    mins: np.ndarray            # (n_columns,) training minima
    maxs: np.ndarray            # (n_columns,) training maxima
    constant: np.ndarray        # (n_columns,) bool, max == min in training data

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        self.constant = np.asarray(self.constant, dtype=bool)
        n = len(self.names)
        if not (self.mins.shape == self.maxs.shape == self.constant.shape == (n,)):
            raise DimensionMismatch(
                f"scaler arrays must all have shape ({n},)")
        self.mins.setflags(write=False)
        self.maxs.setflags(write=False)
        self.constant.setflags(write=False)

    @property
    def n_columns(self) -> int:
        return len(self.names)

    @property
    def span(self) -> np.ndarray:
        span = self.maxs - self.mins
        # constant columns divide by 1 and are zeroed afterwards instead
        return np.where(self.constant, 1.0, span)

    def _check(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.n_columns:
            raise DimensionMismatch(
                f"expected (*, {self.n_columns}) array, got shape {values.shape}")
        return values

    def transform(self, values) -> np.ndarray:
        values = self._check(values)
        out = (values - self.mins) / self.span
        out[:, self.constant] = 0.0
        return out

    def inverse(self, scaled) -> np.ndarray:
        scaled = self._check(scaled)
        out = scaled * self.span + self.mins
        out[:, self.constant] = np.broadcast_to(
            self.mins[self.constant], out[:, self.constant].shape)
        return out

    def subset(self, names) -> "ColumnScaler":
        """Scaler restricted to the given columns, in the given order."""
        idx = [self.names.index(name) for name in names]
        return ColumnScaler(names=tuple(names), mins=self.mins[idx],
                            maxs=self.maxs[idx], constant=self.constant[idx])

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "mins": [float(v) for v in self.mins],
            "maxs": [float(v) for v in self.maxs],
            "constant": [bool(v) for v in self.constant],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ColumnScaler":
        return cls(names=tuple(data["names"]),
                   mins=np.array(data["mins"], dtype=np.float64),
                   maxs=np.array(data["maxs"], dtype=np.float64),
                   constant=np.array(data["constant"], dtype=bool))

    def equals(self, other: "ColumnScaler") -> bool:
        return (self.names == other.names
                and np.array_equal(self.mins, other.mins)
                and np.array_equal(self.maxs, other.maxs)
                and np.array_equal(self.constant, other.constant))


def fit_scaler(values, names) -> ColumnScaler:
    """Fit column minima and maxima on training rows (and nothing else)."""
    values = np.asarray(values, dtype=np.float64)
    names = tuple(names)
    if values.ndim != 2 or values.shape[1] != len(names):
        raise DimensionMismatch(
            f"expected (*, {len(names)}) array, got shape {values.shape}")
    if values.shape[0] == 0:
        raise EmptyData("cannot fit a scaler on zero rows")
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot fit a scaler on non-finite values")
    mins = values.min(axis=0)
    maxs = values.max(axis=0)
    return ColumnScaler(names=names, mins=mins, maxs=maxs, constant=mins == maxs)
