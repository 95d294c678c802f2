"""Score and epsilon predictors."""

from c2f_diffusion.diffusion.predictors.base import ClosedFormScoreModel, ScoreModel
from c2f_diffusion.diffusion.predictors.linear import LinearScoreModel
from c2f_diffusion.diffusion.predictors.mlp import MLPScoreModel, timestep_embedding
from c2f_diffusion.diffusion.predictors.oracle import (
    GaussianScoreOracle,
    MixtureScoreOracle,
)
from c2f_diffusion.diffusion.predictors.registry import (
    get_available_models,
    get_model_class,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "ScoreModel",
    "ClosedFormScoreModel",
    "MixtureScoreOracle",
    "GaussianScoreOracle",
    "LinearScoreModel",
    "MLPScoreModel",
    "timestep_embedding",
    "get_available_models",
    "get_model_class",
    "save_checkpoint",
    "load_checkpoint",
]
