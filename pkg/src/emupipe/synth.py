"""Synthetic meteorology and a toy daily simulator.

The generator produces zero-inflated seasonal rainfall (wet-day coin flip
with a sinusoidal probability, gamma-distributed intensities) and a seasonal
evaporation series, for any number of calendar years.

The toy simulator is a deliberately simple water/nitrogen balance whose four
outputs have the same qualitative shape as a real paddock model: a soil
moisture bucket produces runoff from infiltration and saturation excess,
erosion is a power law of runoff damped by crop cover, and two nitrogen
pools (surface and deep) are topped up by fertiliser and mill mud
applications, decay daily, and are flushed by runoff and drainage
respectively.  Everything is a closed-form recurrence, so tests can trace it
independently, and the dynamics are learnable from the derived features.

A fixed reference scenario set (6 management plans x 2 soils) makes the
module the default fixture source for end-to-end tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import ModelRun, RunSchema, ScenarioKey

SYNTH_FORCINGS = ("rainfall", "evaporation", "fertiliser", "millmud")
SYNTH_SCHEMA = RunSchema.identity(SYNTH_FORCINGS)


@dataclass(frozen=True)
class SoilType:
    name: str
    capacity: float             # bucket size, mm
    infiltration: float         # max daily infiltration, mm
    drain_rate: float           # fraction of stored water percolating per day
    erodibility: float          # multiplier on soil loss

    def __post_init__(self):
        if min(self.capacity, self.infiltration) <= 0 or self.drain_rate < 0:
            raise ValueError(f"invalid soil parameters for {self.name!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "capacity": self.capacity,
                "infiltration": self.infiltration, "drain_rate": self.drain_rate,
                "erodibility": self.erodibility}

    @classmethod
    def from_dict(cls, data: dict) -> "SoilType":
        return cls(**data)


@dataclass(frozen=True)
class ManagementPlan:
    """Annual application calendar for one management class."""

    name: str
    class_id: int                                       # ordinal encoding value
    fertiliser_events: tuple[tuple[int, float], ...] = ()   # (day of year, kg/ha)
    millmud_events: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        for doy, amount in self.fertiliser_events + self.millmud_events:
            if not 1 <= doy <= 365:
                raise ValueError(f"event day {doy} outside 1..365")
            if amount < 0:
                raise ValueError("application amounts must be >= 0")

    def to_dict(self) -> dict:
        return {"name": self.name, "class_id": self.class_id,
                "fertiliser_events": [list(e) for e in self.fertiliser_events],
                "millmud_events": [list(e) for e in self.millmud_events]}

    @classmethod
    def from_dict(cls, data: dict) -> "ManagementPlan":
        return cls(name=data["name"], class_id=data["class_id"],
                   fertiliser_events=tuple((int(d), float(a))
                                           for d, a in data.get("fertiliser_events", [])),
                   millmud_events=tuple((int(d), float(a))
                                        for d, a in data.get("millmud_events", [])))


REFERENCE_SOILS = (
    SoilType("loam", capacity=90.0, infiltration=22.0, drain_rate=0.08, erodibility=1.0),
    SoilType("clay", capacity=70.0, infiltration=12.0, drain_rate=0.03, erodibility=1.6),
)

# Plans 0..2 share timing and differ only in rate, so their nitrogen outputs
# are proportional; 3 shifts the timing, 4 concentrates the dose, 5 uses mill mud.
REFERENCE_PLANS = (
    ManagementPlan("m0", 0, fertiliser_events=((15, 21.0), (74, 30.0), (135, 24.0),
                                               (196, 21.0), (257, 36.0), (318, 30.0))),
    ManagementPlan("m1", 1, fertiliser_events=((15, 14.0), (74, 20.0), (135, 16.0),
                                               (196, 14.0), (257, 24.0), (318, 20.0))),
    ManagementPlan("m2", 2, fertiliser_events=((15, 28.0), (74, 40.0), (135, 32.0),
                                               (196, 28.0), (257, 48.0), (318, 40.0))),
    ManagementPlan("m3", 3, fertiliser_events=((30, 90.0), (305, 90.0))),
    ManagementPlan("m4", 4, fertiliser_events=((244, 180.0),)),
    ManagementPlan("m5", 5, millmud_events=((196, 2000.0),)),
)


@dataclass(frozen=True)
class SynthConfig:
    years: int = 10
    seed: int = 0
    start_year: int = 1970
    # rainfall: wet-day probability follows a sinusoid over the year
    wet_prob_mean: float = 0.38
    wet_prob_amplitude: float = 0.18
    wet_peak_doy: int = 15              # wet-season peak (southern summer)
    rain_shape: float = 0.85            # gamma shape of wet-day totals
    rain_scale: float = 14.0            # gamma scale, mm
    # evaporation: seasonal sinusoid plus noise, floored at zero
    evap_mean: float = 4.5
    evap_amplitude: float = 2.5
    evap_noise: float = 0.6
    # toy simulator coefficients
    erosion_coeff: float = 0.02
    erosion_exponent: float = 1.4
    cover_protection: float = 0.8       # soil loss reduction at full cover
    cover_min: float = 0.1
    cover_grow_days: int = 90
    et_fraction: float = 0.55           # fraction of pan evaporation extracted
    initial_moisture_frac: float = 0.5
    din_runoff_scale: float = 15.0      # runoff (mm) giving ~63% pool extraction
    leach_drain_scale: float = 8.0
    surface_retention: float = 0.97     # surface N pool fraction kept per day
    deep_retention: float = 0.98
    fert_surface_frac: float = 0.7      # fertiliser split surface/deep
    millmud_surface_frac: float = 0.5
    initial_surface_n: float = 5.0
    initial_deep_n: float = 20.0
    planting_month: int = 5
    soils: tuple[SoilType, ...] = REFERENCE_SOILS
    plans: tuple[ManagementPlan, ...] = REFERENCE_PLANS

    def __post_init__(self):
        if self.years < 1:
            raise ValueError("years must be >= 1")
        for name in ("wet_prob_mean", "wet_prob_amplitude"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("rain_shape", "rain_scale", "evap_mean"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("evap_amplitude", "evap_noise", "erosion_coeff",
                     "erosion_exponent", "din_runoff_scale", "leach_drain_scale",
                     "initial_surface_n", "initial_deep_n"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("cover_protection", "cover_min", "et_fraction",
                     "initial_moisture_frac", "surface_retention",
                     "deep_retention", "fert_surface_frac", "millmud_surface_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")

    @property
    def meteorology_id(self) -> str:
        return f"synmet-{self.seed}"

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:  # type: ignore[attr-defined]
            value = getattr(self, name)
            if name == "soils":
                value = [s.to_dict() for s in value]
            elif name == "plans":
                value = [p.to_dict() for p in value]
            out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "soils" in kwargs:
            kwargs["soils"] = tuple(SoilType.from_dict(s) for s in kwargs["soils"])
        if "plans" in kwargs:
            kwargs["plans"] = tuple(ManagementPlan.from_dict(p) for p in kwargs["plans"])
        return cls(**kwargs)


def _dates_for(config: SynthConfig) -> np.ndarray:
    start = np.datetime64(f"{config.start_year:04d}-01-01", "D")
    end = np.datetime64(f"{config.start_year + config.years:04d}-01-01", "D")
    return np.arange(start, end)


def gen_meteorology(config: SynthConfig):
    """(dates, rainfall, evaporation) for the configured calendar span."""
    dates = _dates_for(config)
    doy = (dates - dates.astype("datetime64[Y]")).astype(np.int64) + 1
    phase = 2.0 * math.pi * (doy - config.wet_peak_doy) / 365.25
    rng = np.random.default_rng(config.seed)

    wet_prob = np.clip(config.wet_prob_mean
                       + config.wet_prob_amplitude * np.cos(phase), 0.0, 1.0)
    wet = rng.random(len(dates)) < wet_prob
    intensity = rng.gamma(config.rain_shape, config.rain_scale, size=len(dates))
    rainfall = np.where(wet, intensity, 0.0)

    evaporation = (config.evap_mean + config.evap_amplitude * np.cos(phase)
                   + config.evap_noise * rng.standard_normal(len(dates)))
    evaporation = np.maximum(evaporation, 0.0)
    return dates, rainfall, evaporation


def plan_forcings(dates: np.ndarray, plan: ManagementPlan):
    """Daily fertiliser and mill mud amounts from the annual calendar."""
    doy = (dates - dates.astype("datetime64[Y]")).astype(np.int64) + 1
    fertiliser = np.zeros(len(dates))
    millmud = np.zeros(len(dates))
    for event_doy, amount in plan.fertiliser_events:
        fertiliser[doy == event_doy] += amount
    for event_doy, amount in plan.millmud_events:
        millmud[doy == event_doy] += amount
    return fertiliser, millmud


def _cover_series(dates: np.ndarray, config: SynthConfig) -> np.ndarray:
    """Crop cover ramping from cover_min to 1 after planting, then held."""
    plant = np.datetime64(
        f"{config.start_year:04d}-{config.planting_month:02d}", "M").astype("datetime64[D]")
    days_since = (dates - plant).astype(np.int64)
    ramp = np.clip(days_since / max(config.cover_grow_days, 1), 0.0, 1.0)
    ramp[days_since < 0] = 0.0
    return config.cover_min + (1.0 - config.cover_min) * ramp


def toy_simulate(dates, rainfall, evaporation, plan: ManagementPlan,
                 soil: SoilType, config: SynthConfig,
                 run_id: str | None = None) -> ModelRun:
    """Deterministic daily water/nitrogen balance for one scenario.

    Applications land on the pools at the start of the day; water balance
    runs next; each flux extracts a sub-unit fraction of its pool, so total
    exported nitrogen can never exceed what was applied plus the initial
    pools.
    """
    dates = np.asarray(dates, dtype="datetime64[D]")
    rainfall = np.asarray(rainfall, dtype=np.float64)
    evaporation = np.asarray(evaporation, dtype=np.float64)
    n = len(dates)
    fertiliser, millmud = plan_forcings(dates, plan)
    cover = _cover_series(dates, config)

    runoff = np.zeros(n)
    soil_loss = np.zeros(n)
    din = np.zeros(n)
    leached = np.zeros(n)

    moisture = config.initial_moisture_frac * soil.capacity
    surface_n = config.initial_surface_n
    deep_n = config.initial_deep_n
    fs = config.fert_surface_frac
    ms = config.millmud_surface_frac

    for t in range(n):
        surface_n += fs * fertiliser[t] + ms * millmud[t]
        deep_n += (1.0 - fs) * fertiliser[t] + (1.0 - ms) * millmud[t]

        rain = rainfall[t]
        infil_excess = max(0.0, rain - soil.infiltration)
        moisture += rain - infil_excess
        sat_excess = max(0.0, moisture - soil.capacity)
        moisture = min(moisture, soil.capacity)
        day_runoff = infil_excess + sat_excess
        drainage = soil.drain_rate * moisture
        moisture -= drainage
        moisture -= min(moisture, config.et_fraction * evaporation[t])

        day_din = surface_n * -math.expm1(-day_runoff / config.din_runoff_scale)
        day_leached = deep_n * -math.expm1(-drainage / config.leach_drain_scale)
        surface_n = (surface_n - day_din) * config.surface_retention
        deep_n = (deep_n - day_leached) * config.deep_retention

        runoff[t] = day_runoff
        soil_loss[t] = (config.erosion_coeff * day_runoff ** config.erosion_exponent
                        * (1.0 - config.cover_protection * cover[t])
                        * soil.erodibility)
        din[t] = day_din
        leached[t] = day_leached

    key = ScenarioKey(
        soil_type=soil.name,
        soil_management=0,
        pesticide_management=0,
        fertiliser_management=plan.class_id,
        millmud_management=int(bool(plan.millmud_events)),
        meteorology_id=config.meteorology_id,
        planting_month=config.planting_month,
        planting_year=config.start_year,
        conductivity=0,
    )
    return ModelRun(
        run_id=run_id or f"{soil.name}_{plan.name}",
        key=key,
        dates=dates,
        forcings={"rainfall": rainfall, "evaporation": evaporation,
                  "fertiliser": fertiliser, "millmud": millmud},
        outputs={"runoff": runoff, "soil_loss": soil_loss,
                 "DINrunoff": din, "Nleached": leached},
    )


def reference_archive(config: SynthConfig, soils=None, plans=None) -> list[ModelRun]:
    """One run per (soil, plan) under a single shared meteorology."""
    dates, rainfall, evaporation = gen_meteorology(config)
    runs = []
    for soil in (soils if soils is not None else config.soils):
        for plan in (plans if plans is not None else config.plans):
            runs.append(toy_simulate(dates, rainfall, evaporation, plan, soil, config))
    return runs
