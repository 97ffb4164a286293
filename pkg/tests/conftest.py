import time

import numpy as np
import pytest

from stereoloop.core import CameraCalibration
from stereoloop.synthetic import AppearanceConfig, sample_descriptors
from stereoloop.vocabulary import train


@pytest.fixture
def cal():
    return CameraCalibration(f=100.0, cx=320.0, cy=240.0, baseline=0.5, width=640, height=480)


@pytest.fixture
def wide_cal():
    return CameraCalibration(f=600.0, cx=512.0, cy=272.0, baseline=0.21, width=1024, height=544)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_vocab():
    """k_b=10, L=5 tree trained on the generator's appearance model (not on any test world)."""
    t0 = time.perf_counter()
    desc = sample_descriptors(AppearanceConfig(), 300_000, np.random.default_rng(99), p_bit=0.05)
    tree = train(desc, 10, 5, seed=0)
    tree.train_seconds = time.perf_counter() - t0
    return tree


