"""Shared fixtures: bundled models, attack specs, and sampling configs."""

import pathlib

import pytest

from hybridsafe.attack import AttackSpec
from hybridsafe.semantics import SampleConfig
from hybridsafe.syntax import load_model

ROOT = pathlib.Path(__file__).resolve().parent.parent
MODELS = ROOT / "models"
PROOFS = ROOT / "proofs"

# Sampling boxes used throughout: they cover each model's operating range
# plus the unsafe region so backward analyses can see bad initial states.
COOLING_BOX = {"temp_p": (90.0, 120.0)}
WATERTANK_BOX = {"Q_p": (10.0, 60.0)}
VEHICLE_BOX = {"d_p": (0.0, 5.0), "v_p": (0.0, 2.0)}


@pytest.fixture(scope="session")
def cooling():
    return load_model(str(MODELS / "cooling.hp"))


@pytest.fixture(scope="session")
def cooling_attack():
    return AttackSpec.load(str(MODELS / "cooling_attack.json"))


@pytest.fixture(scope="session")
def watertank():
    return load_model(str(MODELS / "watertank.hp"))


@pytest.fixture(scope="session")
def watertank_attack():
    return AttackSpec.load(str(MODELS / "watertank_attack.json"))


@pytest.fixture(scope="session")
def vehicle():
    return load_model(str(MODELS / "vehicle.hp"))


@pytest.fixture(scope="session")
def vehicle_attack():
    return AttackSpec.load(str(MODELS / "vehicle_attack.json"))


@pytest.fixture
def desk_cfg():
    """The documented desk scale; every report in the acceptance criteria
    is produced at these settings."""
    return SampleConfig()


@pytest.fixture
def cooling_cfg():
    return SampleConfig(init_box=dict(COOLING_BOX))


@pytest.fixture
def watertank_cfg():
    return SampleConfig(init_box=dict(WATERTANK_BOX))


@pytest.fixture
def vehicle_cfg():
    return SampleConfig(init_box=dict(VEHICLE_BOX))


@pytest.fixture
def small_cfg():
    """Cheap config for property tests that only need coarse sampling."""
    return SampleConfig(n_init=200, n_branch=4, ode_step=0.05,
                        loop_unroll=8)
