"""Registry of score models and fingerprinted checkpoints."""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Type, Union

from c2f_diffusion.diffusion.predictors.base import ScoreModel
from c2f_diffusion.diffusion.predictors.linear import LinearScoreModel
from c2f_diffusion.diffusion.predictors.mlp import MLPScoreModel
from c2f_diffusion.diffusion.predictors.oracle import (
    GaussianScoreOracle,
    MixtureScoreOracle,
)
from c2f_diffusion.diffusion.schedule import DiffusionSchedule
from c2f_diffusion.exceptions import (
    CheckpointMismatchError,
    InvalidInputError,
    InvalidParameterError,
)
from c2f_diffusion.schemas import CHECKPOINT_FORMAT_VERSION
from c2f_diffusion.utils.file_handler import FileHandler
from c2f_diffusion.utils.logging import get_logger

logger = get_logger(__name__)

# Register all available score models
MODELS: List[Type[ScoreModel]] = [
    MixtureScoreOracle,
    GaussianScoreOracle,
    LinearScoreModel,
    MLPScoreModel,
]


def get_available_models() -> List[str]:
    """Get the sorted list of registered model types."""
    return sorted(model_cls.get_model_type() for model_cls in MODELS)


def get_model_class(model_type: str) -> Type[ScoreModel]:
    """Get the model class registered under ``model_type``.

    Raises:
        InvalidParameterError: If no model is registered under that name
    """
    for model_cls in MODELS:
        if model_cls.get_model_type() == model_type:
            return model_cls
    raise InvalidParameterError(
        f"Unknown model type '{model_type}'; available: {get_available_models()}"
    )


def _fingerprint_diff(
    expected: Mapping[str, Any], found: Mapping[str, Any]
) -> List[str]:
    keys = set(expected) | set(found)
    return sorted(key for key in keys if expected.get(key) != found.get(key))


def save_checkpoint(
    model: ScoreModel, fingerprint: Mapping[str, Any], path: Union[str, Path]
) -> Path:
    """Write ``model``'s parameters with the schedule fingerprint as JSON.

    Raises:
        InvalidParameterError: If the model has nothing to checkpoint
    """
    if not model.trainable:
        raise InvalidParameterError(
            f"{model.get_name()} is closed-form and has no checkpoint"
        )
    document: Dict[str, Any] = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_type": model.get_model_type(),
        "fingerprint": dict(fingerprint),
        "parameters": model.get_parameters(),
    }
    path = FileHandler.save(document, path)
    logger.info(f"Saved {model.get_model_type()} checkpoint to {path}")
    return path


def load_checkpoint(
    path: Union[str, Path],
    schedule: DiffusionSchedule,
    expected_fingerprint: Mapping[str, Any],
) -> ScoreModel:
    """Load a checkpoint, verify its fingerprint and rebuild the model.

    Raises:
        InvalidInputError: If the file is not a valid checkpoint
        CheckpointMismatchError: If the fingerprint differs from ``expected``
    """
    document = FileHandler.load_and_validate(path, "checkpoint")
    differing = _fingerprint_diff(expected_fingerprint, document["fingerprint"])
    if differing:
        raise CheckpointMismatchError(differing)

    model_cls = get_model_class(document["model_type"])
    parameters = document["parameters"]
    model: ScoreModel
    if model_cls is MLPScoreModel:
        try:
            model = MLPScoreModel(
                schedule,
                hidden=int(parameters["hidden"]),
                embed_dim=int(parameters["embed_dim"]),
            )
        except KeyError as e:
            raise InvalidInputError(f"Checkpoint {path} lacks {e}") from e
    else:
        model = model_cls(schedule)  # type: ignore[call-arg]
    try:
        model.set_parameters(parameters)
    except KeyError as e:
        raise InvalidInputError(f"Checkpoint {path} lacks {e}") from e
    logger.debug(f"Loaded {model.get_model_type()} checkpoint from {path}")
    return model
