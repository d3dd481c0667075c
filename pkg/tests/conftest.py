"""Shared fixtures: small synthetic archives and a short split."""

from __future__ import annotations

import numpy as np
import pytest

from emupipe import ModelRun, ScenarioKey, SplitSpec, SynthConfig, reference_archive


@pytest.fixture(scope="session")
def short_split() -> SplitSpec:
    """Six calendar years: 4 train, 1 validation, 1 test."""
    return SplitSpec(
        train_range=("1970-01-01", "1973-12-31"),
        validation_range=("1974-01-01", "1974-12-31"),
        test_range=("1975-01-01", "1975-12-31"),
    )


@pytest.fixture(scope="session")
def synth_config() -> SynthConfig:
    return SynthConfig(years=6, seed=7)


@pytest.fixture(scope="session")
def archive(synth_config) -> list[ModelRun]:
    """Reference archive: 2 soils x 6 management plans, 6 years of days."""
    return reference_archive(synth_config)


@pytest.fixture(scope="session")
def one_run(archive) -> ModelRun:
    return archive[0]


def make_key(**overrides) -> ScenarioKey:
    base = dict(soil_type="loam", soil_management=0, pesticide_management=0,
                fertiliser_management=0, millmud_management=0,
                meteorology_id="met0", planting_month=5, planting_year=1970,
                conductivity=0)
    base.update(overrides)
    return ScenarioKey(**base)


def make_run(run_id="r0", n_days=40, seed=0, start="1970-01-01", **key_overrides) -> ModelRun:
    """Small random run with all forcings and outputs present."""
    rng = np.random.default_rng(seed)
    dates = np.arange(np.datetime64(start, "D"), np.datetime64(start, "D") + n_days)
    forcings = {name: rng.gamma(1.0, 3.0, n_days)
                for name in ("rainfall", "evaporation", "fertiliser", "millmud")}
    outputs = {name: rng.gamma(1.0, 2.0, n_days)
               for name in ("runoff", "soil_loss", "DINrunoff", "Nleached")}
    return ModelRun(run_id=run_id, key=make_key(**key_overrides), dates=dates,
                    forcings=forcings, outputs=outputs)
