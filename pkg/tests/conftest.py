import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from nfsecure_utils.channel_model import ArrayGeometry
from nfsecure_utils.conic_solver import ConicSolver
from nfsecure_utils.config_manager import ConfigManager
from nfsecure_utils.episode_simulator import frozen_slot_instance

SHIPPED_CONFIG = os.path.join(_ROOT, "config", "paper_vi.toml")
DIFFRACTION_CONFIG = os.path.join(_ROOT, "config", "near_field_diffraction.toml")


@pytest.fixture
def geometry():
    # 16 elements at the 64-element, 1 m spacing
    return ArrayGeometry.from_aperture(16, 15.0 / 63.0, 28e9)


@pytest.fixture
def scenario():
    """Five users, short episode"""
    return ConfigManager().build_scenario("desk", "gbd", seed=7, slots=3)


@pytest.fixture
def small_scenario(scenario):
    """The two users farthest from the eavesdropper in angle"""
    return scenario.with_users(2)


@pytest.fixture
def instance(small_scenario):
    return frozen_slot_instance(small_scenario, 1, 0.15)


@pytest.fixture
def solver():
    return ConicSolver(tolerance=1e-8)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def random_channels(rng):
    def draw(rows, cols):
        return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)
    return draw
