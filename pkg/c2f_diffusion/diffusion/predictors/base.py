"""Base class for score and epsilon predictors.

Predictors map a noised field ``x_i`` and its step ``i`` to an epsilon estimate.
The epsilon/score conversion is owned by this interface so that every
implementation satisfies ``predict_score = -U (I - Abar_i)^(-e) U^T predict_eps``.
"""

from abc import ABC, abstractmethod
from typing import Any, Dict

import numpy as np

from c2f_diffusion.diffusion.schedule import DiffusionSchedule, StepIndex
from c2f_diffusion.diffusion.score import eps_to_score, score_to_eps
from c2f_diffusion.diffusion.spectral import SpectralField


class ScoreModel(ABC):
    """Base abstract class for score models bound to one diffusion schedule."""

    #: Whether ``fit_linear``/``train_mlp`` can update the model
    trainable: bool = False

    def __init__(self, schedule: DiffusionSchedule):
        self.schedule = schedule

    @classmethod
    def get_name(cls) -> str:
        """Get the name of the model.

        Returns:
            The name of the model class
        """
        return cls.__name__

    @classmethod
    @abstractmethod
    def get_model_type(cls) -> str:
        """Get the model type used in configs and checkpoints.

        Returns:
            Model type name
        """

    @abstractmethod
    def predict_eps(self, x: SpectralField, i: StepIndex) -> SpectralField:
        """Predict the noise that produced ``x_i``.

        Args:
            x: Noised field(s) ``x_i``
            i: Step index, scalar or one per batch item

        Returns:
            Epsilon estimate shaped like ``x``
        """

    def predict_score(self, x: SpectralField, i: StepIndex) -> SpectralField:
        """Score estimate derived from :meth:`predict_eps`."""
        return eps_to_score(self.schedule, self.predict_eps(x, i), i)

    def get_parameters(self) -> Dict[str, Any]:
        """JSON-compatible parameters for checkpoints; empty for closed-form models."""
        return {}

    def set_parameters(self, parameters: Dict[str, Any]) -> None:
        """Restore parameters produced by :meth:`get_parameters`."""


class ClosedFormScoreModel(ScoreModel):
    """Score models that know the marginal score exactly.

    Subclasses implement :meth:`predict_score`; epsilon follows by the inverse
    conversion.
    """

    @abstractmethod
    def predict_score(self, x: SpectralField, i: StepIndex) -> SpectralField:
        """Exact score of the marginal ``q_i`` at ``x``."""

    def predict_eps(self, x: SpectralField, i: StepIndex) -> SpectralField:
        return score_to_eps(self.schedule, self.predict_score(x, i), i)

    @abstractmethod
    def log_density(self, x: SpectralField, i: StepIndex) -> np.ndarray:
        """Log-density of the marginal ``q_i`` at ``x`` (one value per batch item)."""
