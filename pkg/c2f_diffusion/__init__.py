"""Coarse-to-fine blur diffusion.

A numerical engine for diffusion processes that blur and add noise at the same
time: a circulant Gaussian blur operator and its eigenbasis, joint noise/blur
schedules, the forward process and its marginals, score-matching objectives,
closed-form score oracles and the reverse deblurring sampler.

Modules:
    - diffusion: operator, schedules, forward process, scores, predictors, sampler
    - evaluation: Gaussian-Frechet distance, moment errors, band energies
    - datasets: synthetic datasets and image folders with matching oracles
    - cli: the ``c2f`` command line
"""

import os

__version__ = "0.1.0"

# Must run before numpy loads its BLAS backend
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
if os.environ.get("C2F_THREADS"):
    for _var in _THREAD_VARS:
        os.environ.setdefault(_var, os.environ["C2F_THREADS"])

# pylint: disable=wrong-import-position
from c2f_diffusion.diffusion import (  # noqa: E402
    DiffusionSchedule,
    SamplerConfig,
    make_blur_operator,
    make_schedule,
    sample,
)
from c2f_diffusion.evaluation import fit_gaussian, frechet_distance  # noqa: E402
from c2f_diffusion.exceptions import C2FError  # noqa: E402
from c2f_diffusion.models import ExperimentConfig  # noqa: E402

__all__ = [
    "C2FError",
    "DiffusionSchedule",
    "ExperimentConfig",
    "SamplerConfig",
    "fit_gaussian",
    "frechet_distance",
    "make_blur_operator",
    "make_schedule",
    "sample",
]
