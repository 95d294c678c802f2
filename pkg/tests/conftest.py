"""Configuration file for pytest."""

import os

import numpy as np
import pytest

from c2f_diffusion.diffusion.schedule import make_schedule
from c2f_diffusion.diffusion.spectral import make_blur_operator
from c2f_diffusion.models.experiment import ExperimentConfig


def pytest_configure(config):
    """Configure pytest before test execution."""
    # Set environment variable for tests to know they're running in parallel
    if config.getoption("dist", "no") != "no":
        os.environ["PYTEST_XDIST_WORKER"] = "1"


@pytest.fixture(scope="session")
def worker_id(request):
    """Return the worker ID for the current test session."""
    if hasattr(request.config, "workerinput"):
        return request.config.workerinput["workerid"]
    return "master"


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def operator8():
    """Blur operator on 8-pixel axes (sigma 0.4, default support)."""
    return make_blur_operator(8, sigma=0.4)


@pytest.fixture(scope="session")
def operator4():
    """Blur operator on 4-pixel axes, used for 16-value images."""
    return make_blur_operator(4, sigma=0.4, support=3)


@pytest.fixture(scope="session")
def schedule_1d(operator8):
    """Short quartic 1D schedule with strong blur."""
    return make_schedule(
        operator8, ndim=1, n_steps=50, beta_end=0.2, f_type="quartic", f_end=2.0
    )


@pytest.fixture(scope="session")
def schedule_2d(operator4):
    """Short quartic 2D schedule on 4x4 images."""
    return make_schedule(
        operator4, ndim=2, n_steps=40, beta_end=0.2, f_type="quartic", f_end=1.0
    )


@pytest.fixture(scope="session")
def zero_schedule_1d(operator8):
    """Standard (blur-free) 1D schedule."""
    return make_schedule(operator8, ndim=1, n_steps=50, beta_end=0.2, f_type="zero")


@pytest.fixture
def small_config(tmp_path):
    """Fast experiment config writing below ``tmp_path``."""
    return ExperimentConfig(
        n_steps=20,
        beta_end=0.3,
        f_end=1.0,
        field_size=4,
        field_ndim=2,
        kernel_support=3,
        dataset_size=64,
        samples_per_step=64,
        n_samples=16,
        n_reference=64,
        stride=5,
        train_steps=5,
        mlp_hidden=8,
        mlp_embed=4,
        batch_size=16,
        output_dir=str(tmp_path / "run"),
    )
