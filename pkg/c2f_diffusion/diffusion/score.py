"""Score/epsilon conversion and the denoising score matching objectives.

The conditional ``q(x_i | x_0)`` has covariance ``U (I - Abar_i) U^T``, so its
score is ``-U (I - Abar_i)^(-1/2) U^T eps``. That exponent is the default; the
schedule's ``unit_score_exponent`` flag switches every conversion to ``-1``.
"""

from typing import TYPE_CHECKING, Callable, Optional

import numpy as np

from c2f_diffusion.diffusion.forward import ForwardSample
from c2f_diffusion.diffusion.schedule import DiffusionSchedule, StepIndex, as_step_index
from c2f_diffusion.diffusion.spectral import SpectralField

if TYPE_CHECKING:
    from c2f_diffusion.diffusion.predictors.base import ScoreModel

Weighting = Callable[[np.ndarray], np.ndarray]


def constant_weighting(steps: np.ndarray) -> np.ndarray:
    """lambda(i) = 1 for every step."""
    return np.ones(np.shape(steps))


def _eps_scale(s: DiffusionSchedule, i: StepIndex) -> np.ndarray:
    index = as_step_index(i, 1, s.n_steps)
    return (1.0 - s.diag_Abar(index)) ** s.score_exponent


def eps_to_score(
    s: DiffusionSchedule, eps_hat: SpectralField, i: StepIndex
) -> SpectralField:
    """``score = -U (I - Abar_i)^(-e) U^T eps_hat``."""
    return eps_hat.with_spectral(-eps_hat.spectral / _eps_scale(s, i))


def score_to_eps(
    s: DiffusionSchedule, score: SpectralField, i: StepIndex
) -> SpectralField:
    """Inverse of :func:`eps_to_score`."""
    return score.with_spectral(-score.spectral * _eps_scale(s, i))


def _squared_norm(values: np.ndarray, ndim: int) -> np.ndarray:
    axes = tuple(range(values.ndim - ndim, values.ndim))
    return np.sum(values**2, axis=axes)


def _weighted_mean(
    per_item: np.ndarray, steps: np.ndarray, weighting: Optional[Weighting]
) -> float:
    weights = (weighting or constant_weighting)(steps)
    return float(np.mean(np.broadcast_to(weights, per_item.shape) * per_item))


def _eps_bar(s: DiffusionSchedule, batch: ForwardSample) -> np.ndarray:
    eps = SpectralField(s.operator, s.ndim, pixel=batch.require_eps())
    return eps.spectral


def score_target(s: DiffusionSchedule, batch: ForwardSample) -> SpectralField:
    """DSM regression target ``-U (I - Abar_i)^(-e) U^T eps`` of every batch item."""
    eps = SpectralField(s.operator, s.ndim, pixel=batch.require_eps())
    return eps_to_score(s, eps, batch.step)


def loss_dsm(
    model: "ScoreModel", batch: ForwardSample, weighting: Optional[Weighting] = None
) -> float:
    """Mean of ``lambda(i) |s_theta(x_i, i) - target|^2`` over the batch.

    Raises:
        InvalidInputError: If the batch carries no stored epsilon
    """
    s = model.schedule
    target = score_target(s, batch)
    predicted = model.predict_score(batch.state, batch.step)
    residual = _squared_norm(predicted.spectral - target.spectral, s.ndim)
    return _weighted_mean(residual, batch.step, weighting)


def loss_eps_weighted(
    model: "ScoreModel", batch: ForwardSample, weighting: Optional[Weighting] = None
) -> float:
    """Mean of ``lambda(i) |U (I - Abar_i)^(-e) U^T (eps_theta - eps)|^2``."""
    s = model.schedule
    eps_bar = _eps_bar(s, batch)
    predicted = model.predict_eps(batch.state, batch.step)
    scaled = (predicted.spectral - eps_bar) / _eps_scale(s, batch.step)
    return _weighted_mean(_squared_norm(scaled, s.ndim), batch.step, weighting)


def loss_eps_simple(
    model: "ScoreModel", batch: ForwardSample, weighting: Optional[Weighting] = None
) -> float:
    """Mean of ``lambda(i) |eps_theta(x_i, i) - eps|^2``: the training loss."""
    s = model.schedule
    eps_bar = _eps_bar(s, batch)
    predicted = model.predict_eps(batch.state, batch.step)
    residual = _squared_norm(predicted.spectral - eps_bar, s.ndim)
    return _weighted_mean(residual, batch.step, weighting)


def oracle_score(
    oracle: "ScoreModel", x: SpectralField, i: StepIndex
) -> SpectralField:
    """Exact marginal score of a closed-form oracle (see ``predictors.oracle``)."""
    return oracle.predict_score(x, i)
