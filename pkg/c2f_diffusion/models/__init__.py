"""Validated configuration objects."""

from c2f_diffusion.models.experiment import ExperimentConfig

__all__ = ["ExperimentConfig"]
