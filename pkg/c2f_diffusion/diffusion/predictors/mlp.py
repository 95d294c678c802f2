"""Small fully connected epsilon predictor with analytic gradients.

The network reads the flattened rotated coefficients ``x_bar`` concatenated with
a sinusoidal embedding of ``i / N`` and predicts ``eps_bar``:

    h1 = tanh([x_bar, emb] W1 + b1)
    h2 = tanh(h1 W2 + b2)
    eps_hat_bar = h2 W3 + b3

All weights live in one flat parameter vector so that optimizers and the
finite-difference gradient check can treat the model as ``loss(theta)``.
"""

from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from c2f_diffusion.diffusion.forward import ForwardSample
from c2f_diffusion.diffusion.predictors.base import ScoreModel
from c2f_diffusion.diffusion.schedule import DiffusionSchedule, StepIndex, as_step_index
from c2f_diffusion.diffusion.spectral import SpectralField, to_spectral
from c2f_diffusion.exceptions import InvalidInputError, InvalidParameterError

DEFAULT_HIDDEN = 64
DEFAULT_EMBED = 16

# Step scale of the embedding: i / N is multiplied by this before the frequencies
_EMBED_SCALE = 1000.0


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of normalized steps ``t`` in (0, 1], shape (len(t), dim)."""
    if dim < 2 or dim % 2:
        raise InvalidParameterError(f"Embedding size must be even and >= 2, got {dim}")
    freqs = 1.0 / 10000.0 ** (np.arange(dim // 2) * 2.0 / dim)
    angles = _EMBED_SCALE * np.asarray(t, dtype=float)[:, None] * freqs[None, :]
    embedding = np.empty((angles.shape[0], dim))
    embedding[:, 0::2] = np.sin(angles)
    embedding[:, 1::2] = np.cos(angles)
    return embedding


class MLPScoreModel(ScoreModel):
    """Two-hidden-layer tanh network over rotated coefficients.

    Args:
        schedule: Diffusion schedule the model is trained for
        hidden: Width of both hidden layers
        embed_dim: Size of the timestep embedding (even)
        rng: Generator for Glorot-uniform initialization
    """

    trainable = True

    def __init__(
        self,
        schedule: DiffusionSchedule,
        hidden: int = DEFAULT_HIDDEN,
        embed_dim: int = DEFAULT_EMBED,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__(schedule)
        if hidden < 1:
            raise InvalidParameterError(f"Hidden width must be >= 1, got {hidden}")
        if embed_dim < 2 or embed_dim % 2:
            raise InvalidParameterError(
                f"Embedding size must be even and >= 2, got {embed_dim}"
            )
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.dim = int(np.prod(schedule.field_shape))
        self.shapes = [
            (self.dim + embed_dim, hidden),
            (hidden,),
            (hidden, hidden),
            (hidden,),
            (hidden, self.dim),
            (self.dim,),
        ]
        self.theta = self._initial_theta(rng or np.random.default_rng(0))

    @classmethod
    def get_model_type(cls) -> str:
        return "mlp"

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(shape) for shape in self.shapes))

    def _initial_theta(self, rng: np.random.Generator) -> np.ndarray:
        pieces = []
        for shape in self.shapes:
            if len(shape) == 2:
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                pieces.append(rng.uniform(-limit, limit, size=shape).ravel())
            else:
                pieces.append(np.zeros(shape))
        return np.concatenate(pieces)

    def unpack(self, theta: np.ndarray) -> List[np.ndarray]:
        """Split a flat parameter vector into ``[W1, b1, W2, b2, W3, b3]``."""
        if theta.shape != (self.n_params,):
            raise InvalidParameterError(
                f"Parameter vector has shape {theta.shape}, expected ({self.n_params},)"
            )
        arrays, start = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            arrays.append(theta[start : start + size].reshape(shape))
            start += size
        return arrays

    def _features(self, x_bar: np.ndarray, steps: np.ndarray) -> np.ndarray:
        embedding = timestep_embedding(steps / self.schedule.n_steps, self.embed_dim)
        return np.concatenate([x_bar, embedding], axis=1)

    def _flat_inputs(
        self, x: SpectralField, i: StepIndex
    ) -> Tuple[np.ndarray, np.ndarray]:
        index = as_step_index(i, 1, self.schedule.n_steps)
        x_bar = x.spectral.reshape(-1, self.dim)
        steps = np.broadcast_to(index, (x_bar.shape[0],)).astype(float)
        return x_bar, steps

    def forward(
        self, theta: np.ndarray, features: np.ndarray
    ) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """Network output and the activations needed for backpropagation."""
        w1, b1, w2, b2, w3, b3 = self.unpack(theta)
        h1 = np.tanh(features @ w1 + b1)
        h2 = np.tanh(h1 @ w2 + b2)
        return h2 @ w3 + b3, {"features": features, "h1": h1, "h2": h2}

    def backward(
        self, theta: np.ndarray, cache: Dict[str, np.ndarray], grad_out: np.ndarray
    ) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. ``theta`` given ``dL/d(output)``."""
        _, _, w2, _, w3, _ = self.unpack(theta)
        h1, h2 = cache["h1"], cache["h2"]

        grad_w3 = h2.T @ grad_out
        grad_b3 = grad_out.sum(axis=0)
        grad_z2 = (grad_out @ w3.T) * (1.0 - h2**2)
        grad_w2 = h1.T @ grad_z2
        grad_b2 = grad_z2.sum(axis=0)
        grad_z1 = (grad_z2 @ w2.T) * (1.0 - h1**2)
        grad_w1 = cache["features"].T @ grad_z1
        grad_b1 = grad_z1.sum(axis=0)

        grads = [grad_w1, grad_b1, grad_w2, grad_b2, grad_w3, grad_b3]
        return np.concatenate([g.ravel() for g in grads])

    def loss_and_grad(
        self,
        batch: ForwardSample,
        theta: Optional[np.ndarray] = None,
        weights: Optional[np.ndarray] = None,
    ) -> Tuple[float, np.ndarray]:
        """``loss_eps_simple`` on ``batch`` and its gradient w.r.t. ``theta``.

        Args:
            batch: Forward samples with stored epsilon
            theta: Parameters to evaluate at (defaults to the model's own)
            weights: Optional per-item lambda(i)
        """
        theta = self.theta if theta is None else theta
        x_bar, steps = self._flat_inputs(batch.state, batch.step)
        eps_bar = to_spectral(
            self.schedule.operator, batch.require_eps(), self.schedule.ndim
        ).reshape(-1, self.dim)

        output, cache = self.forward(theta, self._features(x_bar, steps))
        residual = output - eps_bar
        count = residual.shape[0]
        item_weights = np.ones(count) if weights is None else np.asarray(weights)
        item_weights = np.broadcast_to(item_weights, (count,))

        loss = float(np.sum(item_weights * np.sum(residual**2, axis=1)) / count)
        grad_out = 2.0 * item_weights[:, None] * residual / count
        return loss, self.backward(theta, cache, grad_out)

    def loss(self, batch: ForwardSample, theta: Optional[np.ndarray] = None) -> float:
        value, _ = self.loss_and_grad(batch, theta)
        return value

    def predict_eps(self, x: SpectralField, i: StepIndex) -> SpectralField:
        x_bar, steps = self._flat_inputs(x, i)
        output, _ = self.forward(self.theta, self._features(x_bar, steps))
        return x.with_spectral(output.reshape(x.spectral.shape))

    def get_parameters(self) -> Dict[str, Any]:
        return {
            "hidden": self.hidden,
            "embed_dim": self.embed_dim,
            "theta": self.theta.tolist(),
        }

    def set_parameters(self, parameters: Dict[str, Any]) -> None:
        if (
            parameters.get("hidden") != self.hidden
            or parameters.get("embed_dim") != self.embed_dim
        ):
            raise InvalidInputError(
                f"Checkpoint network is {parameters.get('hidden')}x"
                f"{parameters.get('embed_dim')}, model is "
                f"{self.hidden}x{self.embed_dim}"
            )
        theta = np.asarray(parameters["theta"], dtype=float)
        if theta.shape != (self.n_params,):
            raise InvalidInputError(
                f"Checkpoint holds {theta.size} parameters, expected {self.n_params}"
            )
        self.theta = theta
