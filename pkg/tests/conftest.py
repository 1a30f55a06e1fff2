import json
from pathlib import Path

import pytest

from acoustrap.calibration import build_camera_pair, default_calibration
from acoustrap.config import SimulatorConfig
from acoustrap.control import TrapWorld

BASELINES = Path(__file__).parent / "baselines"


@pytest.fixture(scope="session")
def config() -> SimulatorConfig:
    return SimulatorConfig()


@pytest.fixture(scope="session")
def world(config) -> TrapWorld:
    return TrapWorld.from_config(config)


@pytest.fixture(scope="session")
def cameras(config):
    return build_camera_pair(config.vision)


@pytest.fixture(scope="session")
def calibration():
    return default_calibration()


@pytest.fixture(scope="session")
def trap_baseline() -> dict:
    return json.loads((BASELINES / "trap_quality.json").read_text())
