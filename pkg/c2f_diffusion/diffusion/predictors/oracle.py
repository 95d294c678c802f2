"""Closed-form score oracles.

Both oracles work in rotated coordinates, where the forward marginal of a
datum ``x_0`` is ``N(sqrt(Abar_i) x0_bar, diag(1 - Abar_i))``.
"""

from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from c2f_diffusion.diffusion.predictors.base import ClosedFormScoreModel
from c2f_diffusion.diffusion.schedule import DiffusionSchedule, StepIndex, as_step_index
from c2f_diffusion.diffusion.spectral import (
    SpectralField,
    dense_rotation,
    to_spectral,
)
from c2f_diffusion.exceptions import InvalidParameterError, InvalidStateError
from c2f_diffusion.utils.logging import get_logger

logger = get_logger(__name__)

# Upper bound on batch x components x dimension elements held at once
_CHUNK_ELEMENTS = 1 << 22


def rotation_matrix(s: DiffusionSchedule) -> np.ndarray:
    """Matrix ``R`` with ``flatten(x_bar) = R @ flatten(x)`` for fields of ``s``."""
    return dense_rotation(s.operator, s.ndim)


def _flatten(values: np.ndarray, ndim: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    batch_shape = values.shape[: values.ndim - ndim]
    return values.reshape(batch_shape + (-1,)), batch_shape


class MixtureScoreOracle(ClosedFormScoreModel):
    """Exact score of the forward marginal of an equally weighted mixture.

    Each datum ``x0_m`` contributes a component ``N(x0_m, c I)``; ``c = 0`` gives
    the empirical distribution of the data. At step ``i`` the components become
    ``N(U sqrt(Abar) U^T x0_m, U diag(c Abar + 1 - Abar) U^T)``.

    Args:
        schedule: Diffusion schedule
        data: Array (M, *field_shape) of mixture centers
        component_var: Isotropic variance ``c >= 0`` of every component
    """

    def __init__(
        self,
        schedule: DiffusionSchedule,
        data: np.ndarray,
        component_var: float = 0.0,
    ):
        super().__init__(schedule)
        data = np.asarray(data, dtype=float)
        if data.ndim != schedule.ndim + 1 or data.shape[0] == 0:
            raise InvalidStateError(
                f"Mixture oracle needs a non-empty stack of fields, got {data.shape}"
            )
        if component_var < 0:
            raise InvalidParameterError(
                f"component_var must be >= 0, got {component_var}"
            )
        self.data = data
        self.component_var = float(component_var)
        data_bar = to_spectral(schedule.operator, data, schedule.ndim)
        self._data_bar = data_bar.reshape(data.shape[0], -1)

    @classmethod
    def get_model_type(cls) -> str:
        return "oracle"

    @property
    def n_components(self) -> int:
        return int(self.data.shape[0])

    def _moments(self, i: StepIndex) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        index = as_step_index(i, 1, self.schedule.n_steps)
        abar, _ = _flatten(self.schedule.diag_Abar(index), self.schedule.ndim)
        variance = self.component_var * abar + (1.0 - abar)
        return index, abar, variance

    def _chunks(self, batch: int):
        per_item = max(1, self.n_components * self._data_bar.shape[1])
        size = max(1, _CHUNK_ELEMENTS // per_item)
        for start in range(0, batch, size):
            yield slice(start, min(start + size, batch))

    def _components(
        self, x_bar: np.ndarray, abar: np.ndarray, variance: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Per-component differences ``mu_m - x`` and log-weights, shape (B, M, ...)."""
        means = np.sqrt(abar)[..., None, :] * self._data_bar
        diff = means - x_bar[:, None, :]
        log_weights = -0.5 * np.sum(diff**2 / variance[..., None, :], axis=-1)
        return diff, log_weights

    def _evaluate(self, x: SpectralField, i: StepIndex, with_score: bool):
        index, abar, variance = self._moments(i)
        x_bar, batch_shape = _flatten(x.spectral, x.ndim)
        x_bar = x_bar.reshape(-1, x_bar.shape[-1])
        per_item_steps = index.ndim > 0
        if per_item_steps:
            abar = np.broadcast_to(abar, (x_bar.shape[0], abar.shape[-1]))
            variance = np.broadcast_to(variance, abar.shape)

        scores = np.empty_like(x_bar)
        log_mix = np.empty(x_bar.shape[0])
        for chunk in self._chunks(x_bar.shape[0]):
            a = abar[chunk] if per_item_steps else abar
            v = variance[chunk] if per_item_steps else variance
            diff, log_weights = self._components(x_bar[chunk], a, v)
            log_norm = logsumexp(log_weights, axis=1)
            log_mix[chunk] = log_norm
            if with_score:
                responsibilities = np.exp(log_weights - log_norm[:, None])
                weighted = np.einsum("bm,bmd->bd", responsibilities, diff)
                scores[chunk] = weighted / v

        normalizer = -0.5 * np.sum(np.log(2.0 * np.pi * variance), axis=-1)
        log_density = log_mix - np.log(self.n_components) + normalizer
        return scores.reshape(batch_shape + (-1,)), log_density.reshape(batch_shape)

    def predict_score(self, x: SpectralField, i: StepIndex) -> SpectralField:
        """Responsibility-weighted ``sum_m w_m(x) Sigma_i^-1 (mu_m - x)``."""
        scores, _ = self._evaluate(x, i, with_score=True)
        return x.with_spectral(scores.reshape(x.spectral.shape))

    def log_density(self, x: SpectralField, i: StepIndex) -> np.ndarray:
        _, log_density = self._evaluate(x, i, with_score=False)
        return log_density


class GaussianScoreOracle(ClosedFormScoreModel):
    """Exact score of the forward marginal of Gaussian data ``N(mean, cov)``.

    With ``R`` the flattened rotation, ``q_i = N(sqrt(Abar) R mean,
    sqrt(Abar) R cov R^T sqrt(Abar) + I - Abar)`` in rotated coordinates. The
    Cholesky factor of each step's covariance is cached.

    Args:
        schedule: Diffusion schedule
        mean: Field-shaped data mean
        cov: Covariance of the flattened fields (D x D)
    """

    def __init__(
        self,
        schedule: DiffusionSchedule,
        mean: np.ndarray,
        cov: np.ndarray,
        cache_size: Optional[int] = 128,
    ):
        super().__init__(schedule)
        dim = int(np.prod(schedule.field_shape))
        mean = np.asarray(mean, dtype=float).reshape(-1)
        cov = np.asarray(cov, dtype=float)
        if mean.size != dim or cov.shape != (dim, dim):
            raise InvalidParameterError(
                f"Gaussian oracle expects mean of size {dim} and a {dim}x{dim} "
                f"covariance, got {mean.size} and {cov.shape}"
            )
        self.mean = mean.reshape(schedule.field_shape)
        self.cov = 0.5 * (cov + cov.T)
        rotation = rotation_matrix(schedule)
        self._mean_bar = rotation @ mean
        self._cov_bar = rotation @ self.cov @ rotation.T
        self._factor = lru_cache(maxsize=cache_size)(self._factor_uncached)

    @classmethod
    def get_model_type(cls) -> str:
        return "gaussian-oracle"

    def _factor_uncached(self, step: int):
        abar = self.schedule.diag_Abar(step).reshape(-1)
        root = np.sqrt(abar)
        marginal_cov = root[:, None] * self._cov_bar * root[None, :]
        marginal_cov[np.diag_indices_from(marginal_cov)] += 1.0 - abar
        return root * self._mean_bar, linalg.cho_factor(marginal_cov, lower=True)

    def _evaluate(self, x: SpectralField, i: StepIndex):
        index = as_step_index(i, 1, self.schedule.n_steps)
        x_bar, batch_shape = _flatten(x.spectral, x.ndim)
        x_bar = x_bar.reshape(-1, x_bar.shape[-1])
        steps = np.broadcast_to(index, (x_bar.shape[0],)) if index.ndim else None

        scores = np.empty_like(x_bar)
        log_density = np.empty(x_bar.shape[0])
        groups = np.unique(steps) if steps is not None else [int(index)]
        for step in groups:
            rows = steps == step if steps is not None else slice(None)
            mean_bar, factor = self._factor(int(step))
            centered = x_bar[rows] - mean_bar
            solved = linalg.cho_solve(factor, centered.T).T
            scores[rows] = -solved
            log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
            quad = np.sum(centered * solved, axis=-1)
            log_density[rows] = -0.5 * (
                quad + log_det + centered.shape[-1] * np.log(2.0 * np.pi)
            )
        return scores.reshape(batch_shape + (-1,)), log_density.reshape(batch_shape)

    def predict_score(self, x: SpectralField, i: StepIndex) -> SpectralField:
        scores, _ = self._evaluate(x, i)
        return x.with_spectral(scores.reshape(x.spectral.shape))

    def log_density(self, x: SpectralField, i: StepIndex) -> np.ndarray:
        _, log_density = self._evaluate(x, i)
        return log_density
