"""Per-timestep diagonal affine epsilon predictor."""

from typing import Any, Dict

import numpy as np

from c2f_diffusion.diffusion.predictors.base import ScoreModel
from c2f_diffusion.diffusion.schedule import DiffusionSchedule, StepIndex, as_step_index
from c2f_diffusion.diffusion.spectral import SpectralField
from c2f_diffusion.exceptions import InvalidInputError


class LinearScoreModel(ScoreModel):
    """``eps_hat_bar = scale_i * x_bar + offset_i``, one coefficient per frequency.

    For Gaussian data whose covariance is diagonal in rotated coordinates the
    DSM-optimal predictor lies in this family. A fresh model predicts zero.
    """

    trainable = True

    def __init__(self, schedule: DiffusionSchedule):
        super().__init__(schedule)
        shape = (schedule.n_steps,) + schedule.field_shape
        self.scale = np.zeros(shape)
        self.offset = np.zeros(shape)

    @classmethod
    def get_model_type(cls) -> str:
        return "linear"

    def predict_eps(self, x: SpectralField, i: StepIndex) -> SpectralField:
        row = as_step_index(i, 1, self.schedule.n_steps) - 1
        return x.with_spectral(self.scale[row] * x.spectral + self.offset[row])

    def set_step(self, i: int, scale: np.ndarray, offset: np.ndarray) -> None:
        """Overwrite the coefficients of step ``i``."""
        row = int(as_step_index(i, 1, self.schedule.n_steps)) - 1
        self.scale[row] = scale
        self.offset[row] = offset

    def get_parameters(self) -> Dict[str, Any]:
        return {"scale": self.scale.tolist(), "offset": self.offset.tolist()}

    def set_parameters(self, parameters: Dict[str, Any]) -> None:
        scale = np.asarray(parameters["scale"], dtype=float)
        offset = np.asarray(parameters["offset"], dtype=float)
        if scale.shape != self.scale.shape or offset.shape != self.offset.shape:
            raise InvalidInputError(
                f"Linear model parameters have shape {scale.shape}/{offset.shape}, "
                f"expected {self.scale.shape}"
            )
        self.scale = scale
        self.offset = offset
