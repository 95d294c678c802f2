"""Blur diffusion core: operator, schedules, forward process, scores and sampler."""

from c2f_diffusion.diffusion.forward import (
    ForwardSample,
    Trajectory,
    forward_trajectory,
    marginal_sample,
)
from c2f_diffusion.diffusion.sampler import (
    SamplerConfig,
    discretization_contract_check,
    sample,
)
from c2f_diffusion.diffusion.schedule import DiffusionSchedule, make_schedule
from c2f_diffusion.diffusion.spectral import (
    BlurOperator,
    SpectralField,
    make_blur_operator,
)

__all__ = [
    "BlurOperator",
    "SpectralField",
    "make_blur_operator",
    "DiffusionSchedule",
    "make_schedule",
    "ForwardSample",
    "Trajectory",
    "marginal_sample",
    "forward_trajectory",
    "SamplerConfig",
    "sample",
    "discretization_contract_check",
]
