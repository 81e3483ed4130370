import numpy as np
import pytest

from thermoforge.domain import (
    BUILDINGS,
    DEFAULT_RANGES,
    OccupancySchedule,
    UsageSchedule,
    synthetic_weather,
)
from thermoforge.refsim import OracleConfig
from thermoforge.sampler import default_normalizer

BASE_DAY = {
    "start_cool": 8, "end_cool": 19, "t_cool_reduced": 28, "t_cool_comfort": 23,
    "start_heat": 7, "end_heat": 18, "t_heat_reduced": 18, "t_heat_comfort": 22,
    "start_vent": 8, "end_vent": 19, "t_vent": 20, "vol_vent": 1.0,
}


@pytest.fixture(scope="session")
def geometry():
    return BUILDINGS["stanley"]


@pytest.fixture(scope="session")
def weather28():
    return synthetic_weather(28, seed=3)


@pytest.fixture(scope="session")
def oracle_cfg():
    return OracleConfig()


@pytest.fixture(scope="session")
def normalizer(geometry, oracle_cfg):
    return default_normalizer(DEFAULT_RANGES, oracle_cfg, geometry)


@pytest.fixture
def usage():
    return UsageSchedule.uniform(BASE_DAY)


@pytest.fixture
def occupancy():
    return OccupancySchedule.uniform(8, 18)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
