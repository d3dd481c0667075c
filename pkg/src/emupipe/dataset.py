"""Run archive schema: load, validate, write and split daily simulator runs.

A run archive is a directory of CSV files, one per simulator run, each with a
single header row and one data row per calendar day.  The mapping from logical
variable names to CSV headers lives in a :class:`RunSchema` so differently
labelled archives can be ingested without code changes.  Scenario metadata is
either constant in the schema or read from a JSON sidecar next to each CSV.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    EmptySlice,
    MissingColumn,
    NegativeOutput,
    NonContiguousDates,
    NonFiniteValue,
)

logger = logging.getLogger(__name__)

# The four daily target series every run must carry.
OUTPUT_VARIABLES = ("runoff", "soil_loss", "DINrunoff", "Nleached")

ONE_DAY = np.timedelta64(1, "D")


def _check_categorical(name, value):
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise ValueError(f"{name} must be a string or integer id, got {value!r}")
    if isinstance(value, str) and not value:
        raise ValueError(f"{name} must be a non-empty string")
    if isinstance(value, int) and value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value}")


@dataclass(frozen=True)
class ScenarioKey:
    """Identifies one simulator run.

    The four management ids cover soil, pesticide, fertiliser and millmud
    management respectively.  Categorical ids are compared exactly.
    """

    soil_type: str | int
    soil_management: str | int
    pesticide_management: str | int
    fertiliser_management: str | int
    millmud_management: str | int
    meteorology_id: str | int
    planting_month: int
    planting_year: int
    conductivity: str | int

    def __post_init__(self):
        for name in ("soil_type", "soil_management", "pesticide_management",
                     "fertiliser_management", "millmud_management",
                     "meteorology_id", "conductivity"):
            _check_categorical(name, getattr(self, name))
        if not 1 <= int(self.planting_month) <= 12:
            raise ValueError(f"planting_month must be in [1, 12], got {self.planting_month}")

    def to_dict(self) -> dict:
        return {
            "soil_type": self.soil_type,
            "soil_management": self.soil_management,
            "pesticide_management": self.pesticide_management,
            "fertiliser_management": self.fertiliser_management,
            "millmud_management": self.millmud_management,
            "meteorology_id": self.meteorology_id,
            "planting_month": self.planting_month,
            "planting_year": self.planting_year,
            "conductivity": self.conductivity,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioKey":
        return cls(**data)


def _as_dates(values) -> np.ndarray:
    return np.asarray(values, dtype="datetime64[D]")


@dataclass
class ModelRun:
    """One simulator run: a scenario key plus aligned daily series.

    Arrays are made read-only on construction; a ModelRun is safe to share
    between threads.  Zero-day runs are permitted only as split slices.
    """

    run_id: str
    key: ScenarioKey
    dates: np.ndarray                 # datetime64[D], strictly consecutive
    forcings: dict[str, np.ndarray]
    outputs: dict[str, np.ndarray]

    def __post_init__(self):
        self.dates = _as_dates(self.dates)
        self.forcings = {k: np.asarray(v, dtype=np.float64) for k, v in self.forcings.items()}
        self.outputs = {k: np.asarray(v, dtype=np.float64) for k, v in self.outputs.items()}
        self.validate()
        self.dates.setflags(write=False)
        for arr in (*self.forcings.values(), *self.outputs.values()):
            arr.setflags(write=False)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def validate(self):
        n = len(self.dates)
        if n > 1:
            gaps = np.diff(self.dates) != ONE_DAY
            if gaps.any():
                first = int(np.argmax(gaps)) + 1
                raise NonContiguousDates(self.dates[first])
        for name, series in {**self.forcings, **self.outputs}.items():
            if len(series) != n:
                raise ValueError(f"series {name!r} has length {len(series)}, expected {n}")
            bad = ~np.isfinite(series)
            if bad.any():
                raise NonFiniteValue(int(np.argmax(bad)) + 1, name)
        for name in OUTPUT_VARIABLES:
            if name not in self.outputs:
                raise MissingColumn(name)
            neg = self.outputs[name] < 0.0
            if neg.any():
                raise NegativeOutput(int(np.argmax(neg)) + 1, name)

    def window(self, start, end) -> "ModelRun":
        """Sub-run covering dates within [start, end] inclusive."""
        start = np.datetime64(start, "D")
        end = np.datetime64(end, "D")
        mask = (self.dates >= start) & (self.dates <= end)
        return ModelRun(
            run_id=self.run_id,
            key=self.key,
            dates=self.dates[mask],
            forcings={k: v[mask] for k, v in self.forcings.items()},
            outputs={k: v[mask] for k, v in self.outputs.items()},
        )

    def equals(self, other: "ModelRun") -> bool:
        if self.key != other.key or self.run_id != other.run_id:
            return False
        if not np.array_equal(self.dates, other.dates):
            return False
        for mine, theirs in ((self.forcings, other.forcings), (self.outputs, other.outputs)):
            if set(mine) != set(theirs):
                return False
            if any(not np.array_equal(mine[k], theirs[k]) for k in mine):
                return False
        return True


@dataclass(frozen=True)
class SplitSpec:
    """Three disjoint, chronologically ordered date ranges (inclusive)."""

    train_range: tuple[np.datetime64, np.datetime64]
    validation_range: tuple[np.datetime64, np.datetime64]
    test_range: tuple[np.datetime64, np.datetime64]

    def __post_init__(self):
        ranges = []
        for name in ("train_range", "validation_range", "test_range"):
            lo, hi = getattr(self, name)
            lo, hi = np.datetime64(lo, "D"), np.datetime64(hi, "D")
            if lo > hi:
                raise ValueError(f"{name} start {lo} is after end {hi}")
            object.__setattr__(self, name, (lo, hi))
            ranges.append((lo, hi))
        for (_, hi), (lo, _) in zip(ranges, ranges[1:]):
            if hi >= lo:
                raise ValueError("split ranges must be disjoint and ordered train < validation < test")

    @classmethod
    def default(cls) -> "SplitSpec":
        return cls(
            train_range=("1970-01-01", "2010-12-31"),
            validation_range=("2011-01-01", "2015-12-31"),
            test_range=("2016-01-01", "2018-11-19"),
        )

    def range_for(self, which: str) -> tuple[np.datetime64, np.datetime64]:
        ranges = {
            "train": self.train_range,
            "validation": self.validation_range,
            "val": self.validation_range,
            "test": self.test_range,
        }
        if which not in ranges:
            raise KeyError(f"unknown split {which!r}; use train, val, or test")
        return ranges[which]

    def to_dict(self) -> dict:
        return {
            "train": [str(d) for d in self.train_range],
            "validation": [str(d) for d in self.validation_range],
            "test": [str(d) for d in self.test_range],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitSpec":
        return cls(
            train_range=tuple(data["train"]),
            validation_range=tuple(data["validation"]),
            test_range=tuple(data["test"]),
        )


@dataclass(frozen=True)
class RunSchema:
    """Column-name mapping for one run archive.

    ``forcings`` and ``outputs`` map logical variable names to CSV headers.
    When ``scenario`` is None the scenario key is read from a JSON sidecar
    stored next to each CSV (same name, ``.json`` suffix).
    """

    date_column: str = "date"
    forcings: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(
        default_factory=lambda: {name: name for name in OUTPUT_VARIABLES})
    scenario: dict | None = None

    def __post_init__(self):
        missing = [v for v in OUTPUT_VARIABLES if v not in self.outputs]
        if missing:
            raise ValueError(f"schema must map all output variables, missing {missing}")

    @classmethod
    def identity(cls, forcing_names=()) -> "RunSchema":
        """Schema whose CSV headers equal the logical names."""
        return cls(forcings={name: name for name in forcing_names})

    @classmethod
    def from_dict(cls, data: dict) -> "RunSchema":
        known = {"date_column", "forcings", "outputs", "scenario"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        kwargs = dict(data)
        kwargs.setdefault("outputs", {name: name for name in OUTPUT_VARIABLES})
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {
            "date_column": self.date_column,
            "forcings": dict(self.forcings),
            "outputs": dict(self.outputs),
        }
        if self.scenario is not None:
            out["scenario"] = dict(self.scenario)
        return out


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def load_run(path, schema: RunSchema, lenient: bool = False) -> ModelRun:
    """Load and validate one run CSV.

    Strict by default: missing values, non-finite entries and negative outputs
    are errors.  With ``lenient=True`` negative outputs are clamped to zero
    with a logged warning; everything else still raises.
    """
    path = Path(path)
    # round_trip: repr-written floats must come back bit-identical
    frame = pd.read_csv(path, float_precision="round_trip")
    if len(frame) == 0:
        raise EmptySlice("file")

    for header in (schema.date_column, *schema.forcings.values(), *schema.outputs.values()):
        if header not in frame.columns:
            raise MissingColumn(header)

    try:
        dates = _as_dates(pd.to_datetime(frame[schema.date_column], format="ISO8601").to_numpy())
    except (ValueError, TypeError) as exc:
        raise ValueError(f"date column {schema.date_column!r} is not ISO-8601: {exc}") from exc

    def column(header):
        values = pd.to_numeric(frame[header], errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(values)
        if bad.any():
            raise NonFiniteValue(int(np.argmax(bad)) + 1, header)
        return values

    forcings = {logical: column(header) for logical, header in schema.forcings.items()}
    outputs = {}
    for logical, header in schema.outputs.items():
        values = column(header)
        neg = values < 0.0
        if neg.any():
            if not lenient:
                raise NegativeOutput(int(np.argmax(neg)) + 1, logical)
            logger.warning("clamped %d negative %s values to zero in %s",
                           int(neg.sum()), logical, path.name)
            values = np.where(neg, 0.0, values)
        outputs[logical] = values

    if schema.scenario is not None:
        key = ScenarioKey.from_dict(schema.scenario)
    else:
        sidecar = _sidecar_path(path)
        if not sidecar.exists():
            raise MissingColumn(f"scenario sidecar {sidecar.name}")
        key = ScenarioKey.from_dict(json.loads(sidecar.read_text()))

    return ModelRun(run_id=path.stem, key=key, dates=dates, forcings=forcings, outputs=outputs)


def write_run(run: ModelRun, path, schema: RunSchema):
    """Write a run back to CSV (plus sidecar when the schema has no constant key).

    Floats are written with repr so that load_run(write_run(run)) reproduces
    the run bit for bit.
    """
    path = Path(path)
    headers = [schema.date_column]
    series = []
    for logical, header in schema.forcings.items():
        headers.append(header)
        series.append(run.forcings[logical])
    for logical, header in schema.outputs.items():
        headers.append(header)
        series.append(run.outputs[logical])

    with open(path, "w", newline="") as fh:
        fh.write(",".join(headers) + "\n")
        date_strings = np.datetime_as_string(run.dates, unit="D")
        for i in range(run.n_days):
            row = [date_strings[i]]
            row.extend(repr(float(col[i])) for col in series)
            fh.write(",".join(row) + "\n")

    if schema.scenario is None:
        _sidecar_path(path).write_text(json.dumps(run.key.to_dict(), indent=1, sort_keys=True))


def load_archive(directory, schema: RunSchema, lenient: bool = False) -> list[ModelRun]:
    """Load every ``*.csv`` run in a directory, sorted by file name."""
    directory = Path(directory)
    return [load_run(p, schema, lenient=lenient) for p in sorted(directory.glob("*.csv"))]


def split_run(run: ModelRun, spec: SplitSpec | None = None,
              allow_empty: bool = False) -> tuple[ModelRun, ModelRun, ModelRun]:
    """Partition a run into train/validation/test slices by calendar date.

    In strict mode (default) a range that selects zero days raises
    EmptySlice; with ``allow_empty`` the corresponding slice is returned with
    zero days.
    """
    if spec is None:
        spec = SplitSpec.default()
    slices = []
    for name in ("train", "validation", "test"):
        lo, hi = spec.range_for(name)
        part = run.window(lo, hi)
        if part.n_days == 0 and not allow_empty:
            raise EmptySlice(name)
        slices.append(part)
    return tuple(slices)


def concat_runs(parts: list[ModelRun]) -> ModelRun:
    """Concatenate consecutive slices of the same run back together."""
    parts = [p for p in parts if p.n_days > 0]
    if not parts:
        raise EmptySlice("concat")
    first = parts[0]
    return ModelRun(
        run_id=first.run_id,
        key=first.key,
        dates=np.concatenate([p.dates for p in parts]),
        forcings={k: np.concatenate([p.forcings[k] for p in parts]) for k in first.forcings},
        outputs={k: np.concatenate([p.outputs[k] for p in parts]) for k in first.outputs},
    )
