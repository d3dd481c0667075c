"""Per-day predictor derivation from a loaded run.

Emitted feature order (fixed; names in parentheses):

1.  management encodings (mgmt_soil, mgmt_pesticide, mgmt_fertiliser, mgmt_millmud)
2.  conductivity encoding (conductivity)
3.  day of year (day_of_year)
4.  seasonal trig pair (seasonal_sin, seasonal_cos)
5.  planting indicators (planting_month_flag, planting_year_flag)
6.  days since events (days_since_cane_planted, days_since_cowpea_planted,
    days_since_fertiliser, days_since_millmud)
7.  crop-in indicators (cane_in, cowpea_in)
8.  persistent amounts (persistent_fertiliser, persistent_millmud)
9.  raw dailies (rainfall, evaporation, fertiliser, millmud)
10. smoothed dailies (<variable>_smooth_<alpha> for each of the four raw
    dailies and each smoothing constant, variable-major order)

Under the default spec (ordinal encodings, three smoothing constants) this is
22 scalar features plus 12 smoothed series, 34 features per day.  Every
feature at day t depends only on data at days <= t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import ModelRun
from .errors import AlphaOutOfRange, MissingForcing

# Feature families that can be switched off individually.
FAMILIES = (
    "management", "conductivity", "day_of_year", "seasonal",
    "planting_flags", "time_since", "crop_in", "persistent",
    "raw", "smoothed",
)

RAW_FORCINGS = ("rainfall", "evaporation", "fertiliser", "millmud")


@dataclass(frozen=True)
class FeatureSpec:
    """Configuration for the derived predictor set."""

    smoothing_alphas: tuple[float, ...] = (0.9, 0.5, 0.1)
    seasonal_period: float = 365.25
    families: tuple[str, ...] = FAMILIES
    encoding_mode: str = "ordinal"          # or "onehot"
    # per scenario field: {category (as str): numeric code}; integer-valued
    # categories fall back to their own value when no table is given
    category_codes: dict[str, dict[str, float]] = field(default_factory=dict)
    crop_duration_days: int = 365
    time_since_cap: float | None = None

    def __post_init__(self):
        if not self.smoothing_alphas:
            raise ValueError("smoothing_alphas must be non-empty")
        for alpha in self.smoothing_alphas:
            if not 0.0 < alpha < 1.0:
                raise AlphaOutOfRange(alpha)
        if self.seasonal_period <= 0:
            raise ValueError("seasonal_period must be positive")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown feature families: {sorted(unknown)}")
        if self.encoding_mode not in ("ordinal", "onehot"):
            raise ValueError(f"encoding_mode must be 'ordinal' or 'onehot', got {self.encoding_mode!r}")

    def to_dict(self) -> dict:
        return {
            "smoothing_alphas": list(self.smoothing_alphas),
            "seasonal_period": self.seasonal_period,
            "families": list(self.families),
            "encoding_mode": self.encoding_mode,
            "category_codes": {k: dict(v) for k, v in self.category_codes.items()},
            "crop_duration_days": self.crop_duration_days,
            "time_since_cap": self.time_since_cap,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSpec":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown feature spec keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("smoothing_alphas", "families"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class FeatureTable:
    """One row of derived predictors per day of the source run."""

    dates: np.ndarray           # datetime64[D]
    names: tuple[str, ...]
    values: np.ndarray          # (n_days, n_features) float64

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.dates), len(self.names)):
            raise ValueError(f"values shape {self.values.shape} does not match "
                             f"{len(self.dates)} days x {len(self.names)} features")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature table contains non-finite values")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def rows_in(self, start, end) -> np.ndarray:
        start, end = np.datetime64(start, "D"), np.datetime64(end, "D")
        return (self.dates >= start) & (self.dates <= end)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("date," + ",".join(self.names) + "\n")
            date_strings = np.datetime_as_string(self.dates, unit="D")
            for i in range(self.n_days):
                fh.write(date_strings[i] + ","
                         + ",".join(repr(float(v)) for v in self.values[i]) + "\n")

    @classmethod
    def from_csv(cls, path) -> "FeatureTable":
        import pandas as pd
        frame = pd.read_csv(path, float_precision="round_trip")
        names = tuple(frame.columns[1:])
        return cls(dates=frame.iloc[:, 0].to_numpy(dtype="datetime64[D]"),
                   names=names,
                   values=frame.iloc[:, 1:].to_numpy(dtype=np.float64))


def exp_smooth(series, alpha: float) -> np.ndarray:
    """Exponential smoothing s_t = alpha*x_t + (1-alpha)*s_{t-1}, s_0 = x_0."""
    if not 0.0 < alpha < 1.0:
        raise AlphaOutOfRange(alpha)
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    if len(x) == 0:
        return out
    out[0] = x[0]
    keep = 1.0 - alpha
    acc = x[0]
    for t in range(1, len(x)):
        acc = alpha * x[t] + keep * acc
        out[t] = acc
    return out


def seasonal_encoding(day_index_in_year, period: float):
    """Trig pair (sin, cos) of 2*pi*d/period for day d counted from 1."""
    angle = 2.0 * math.pi * np.asarray(day_index_in_year, dtype=np.float64) / period
    return np.sin(angle), np.cos(angle)


def time_since_event(event_flags, cap: float | None = None) -> np.ndarray:
    """Days since the most recent true flag at or before each day.

    Before the first event the value is the length of history so far (t+1 at
    0-based day t), meaning "at least this many days".  With ``cap`` set, all
    values are clipped at the cap.  Event days themselves read 0.
    """
    flags = np.asarray(event_flags, dtype=bool)
    out = np.empty(len(flags), dtype=np.float64)
    since = None
    for t, hit in enumerate(flags):
        if hit:
            since = 0
        elif since is not None:
            since += 1
        out[t] = float(since) if since is not None else float(t + 1)
    if cap is not None:
        np.minimum(out, cap, out=out)
    return out


def persistent_value(amounts) -> np.ndarray:
    """Most recent strictly positive amount at or before each day (0 before any)."""
    x = np.asarray(amounts, dtype=np.float64)
    out = np.empty_like(x)
    current = 0.0
    for t, value in enumerate(x):
        if value > 0.0:
            current = value
        out[t] = current
    return out


def _day_of_year(dates: np.ndarray) -> np.ndarray:
    return (dates - dates.astype("datetime64[Y]")).astype(np.int64) + 1


def _years(dates: np.ndarray) -> np.ndarray:
    return dates.astype("datetime64[Y]").astype(np.int64) + 1970


def _months(dates: np.ndarray) -> np.ndarray:
    return (dates.astype("datetime64[M]") - dates.astype("datetime64[Y]")).astype(np.int64) + 1


def _encode(spec: FeatureSpec, field_name: str, value) -> float:
    table = spec.category_codes.get(field_name)
    if table is not None and str(value) in table:
        return float(table[str(value)])
    if isinstance(value, int):
        return float(value)
    try:
        return float(int(value))
    except (TypeError, ValueError):
        raise ValueError(
            f"no numeric code for {field_name}={value!r}; supply category_codes") from None


def _encoding_columns(spec: FeatureSpec, field_name: str, short: str, value):
    """(names, columns) for one scenario field under the configured mode."""
    if spec.encoding_mode == "ordinal":
        return [short], [_encode(spec, field_name, value)]
    table = spec.category_codes.get(field_name)
    if table is None:
        raise ValueError(f"one-hot encoding of {field_name} requires a category_codes table")
    names, cols = [], []
    for category in sorted(table, key=lambda c: table[c]):
        names.append(f"{short}={category}")
        cols.append(1.0 if str(value) == category else 0.0)
    return names, cols


def _forcing(run: ModelRun, name: str) -> np.ndarray:
    if name not in run.forcings:
        raise MissingForcing(name)
    return run.forcings[name]


def _planting_reconstruction(run: ModelRun, spec: FeatureSpec):
    """Fallback cane planting events when the archive has no crop columns."""
    key = run.key
    plant = np.datetime64(f"{key.planting_year:04d}-{key.planting_month:02d}", "M").astype("datetime64[D]")
    planted = (run.dates == plant).astype(np.float64)
    in_ground = ((run.dates >= plant)
                 & (run.dates < plant + np.timedelta64(spec.crop_duration_days, "D"))
                 ).astype(np.float64)
    return planted, in_ground


def derive_features(run: ModelRun, spec: FeatureSpec | None = None) -> FeatureTable:
    """Build the full predictor table for one run. Deterministic and causal."""
    if spec is None:
        spec = FeatureSpec()
    fams = set(spec.families)
    n = run.n_days
    names: list[str] = []
    columns: list[np.ndarray] = []

    def add(name, values):
        names.append(name)
        columns.append(np.broadcast_to(np.asarray(values, dtype=np.float64), (n,)))

    if "management" in fams:
        for field_name, short in (
            ("soil_management", "mgmt_soil"),
            ("pesticide_management", "mgmt_pesticide"),
            ("fertiliser_management", "mgmt_fertiliser"),
            ("millmud_management", "mgmt_millmud"),
        ):
            enc_names, enc_cols = _encoding_columns(spec, field_name, short,
                                                    getattr(run.key, field_name))
            for enc_name, value in zip(enc_names, enc_cols):
                add(enc_name, value)
    if "conductivity" in fams:
        enc_names, enc_cols = _encoding_columns(spec, "conductivity", "conductivity",
                                                run.key.conductivity)
        for enc_name, value in zip(enc_names, enc_cols):
            add(enc_name, value)

    doy = _day_of_year(run.dates)
    if "day_of_year" in fams:
        add("day_of_year", doy.astype(np.float64))
    if "seasonal" in fams:
        sin_part, cos_part = seasonal_encoding(doy, spec.seasonal_period)
        add("seasonal_sin", sin_part)
        add("seasonal_cos", cos_part)
    if "planting_flags" in fams:
        add("planting_month_flag", (_months(run.dates) == run.key.planting_month).astype(np.float64))
        add("planting_year_flag", (_years(run.dates) == run.key.planting_year).astype(np.float64))

    if fams & {"time_since", "crop_in"}:
        if "cane_planted" in run.forcings:
            cane_planted = run.forcings["cane_planted"]
            cane_in = run.forcings.get("cane_in")
            if cane_in is None:
                cane_in = (time_since_event(cane_planted > 0) < spec.crop_duration_days
                           ).astype(np.float64)
        else:
            cane_planted, cane_in = _planting_reconstruction(run, spec)
        if "cowpea_planted" in run.forcings:
            cowpea_planted = run.forcings["cowpea_planted"]
            cowpea_in = run.forcings.get("cowpea_in", np.zeros(n))
        else:
            cowpea_planted = np.zeros(n)
            cowpea_in = np.zeros(n)

    if "time_since" in fams:
        add("days_since_cane_planted", time_since_event(cane_planted > 0, spec.time_since_cap))
        add("days_since_cowpea_planted", time_since_event(cowpea_planted > 0, spec.time_since_cap))
        add("days_since_fertiliser",
            time_since_event(_forcing(run, "fertiliser") > 0, spec.time_since_cap))
        add("days_since_millmud",
            time_since_event(_forcing(run, "millmud") > 0, spec.time_since_cap))
    if "crop_in" in fams:
        add("cane_in", cane_in)
        add("cowpea_in", cowpea_in)
    if "persistent" in fams:
        add("persistent_fertiliser", persistent_value(_forcing(run, "fertiliser")))
        add("persistent_millmud", persistent_value(_forcing(run, "millmud")))
    if "raw" in fams:
        for name in RAW_FORCINGS:
            add(name, _forcing(run, name))
    if "smoothed" in fams:
        for name in RAW_FORCINGS:
            series = _forcing(run, name)
            for alpha in spec.smoothing_alphas:
                add(f"{name}_smooth_{alpha:g}", exp_smooth(series, alpha))

    values = np.column_stack(columns) if columns else np.zeros((n, 0))
    return FeatureTable(dates=run.dates, names=tuple(names), values=values)
