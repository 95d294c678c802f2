"""Fitting the trainable predictors.

* :func:`fit_linear` solves one ridge regression per step and frequency.
* :func:`train_mlp` minimizes the simple epsilon loss with Adam, after checking
  the analytic gradients against central differences.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from c2f_diffusion.diffusion.forward import (
    ForwardSample,
    draw_training_batch,
    marginal_sample,
)
from c2f_diffusion.diffusion.predictors.linear import LinearScoreModel
from c2f_diffusion.diffusion.predictors.mlp import MLPScoreModel
from c2f_diffusion.diffusion.spectral import SpectralField, to_spectral
from c2f_diffusion.exceptions import (
    InvalidInputError,
    InvalidParameterError,
    InvalidStateError,
    NonFiniteError,
)
from c2f_diffusion.utils.logging import get_logger
from c2f_diffusion.utils.telemetry import training_steps

logger = get_logger(__name__)

# Regularizer used when a frequency's design variance collapses
RIDGE_FALLBACK = 1e-6
_DEGENERATE_VARIANCE = 1e-12

GRADIENT_CHECK_TOLERANCE = 1e-4
GRADIENT_CHECK_STEP = 1e-5
# Floor of the denominator in the relative gradient error
GRADIENT_CHECK_FLOOR = 1e-3


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam hyperparameters and minibatch size."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise InvalidParameterError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidParameterError(
                f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}"
            )
        if self.batch_size < 1:
            raise InvalidParameterError(
                f"batch_size must be >= 1, got {self.batch_size}"
            )


class Adam:
    """Adam on a flat parameter vector."""

    def __init__(self, config: OptimizerConfig, size: int):
        self.config = config
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        c = self.config
        self.t += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad**2
        m_hat = self.m / (1.0 - c.beta1**self.t)
        v_hat = self.v / (1.0 - c.beta2**self.t)
        return theta - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


@dataclass
class TrainingHistory:
    """Per-step training loss and its exponential moving average."""

    decay: float = 0.99
    losses: List[float] = field(default_factory=list)
    ema: List[float] = field(default_factory=list)

    def record(self, loss: float) -> None:
        previous = self.ema[-1] if self.ema else loss
        self.losses.append(loss)
        self.ema.append(self.decay * previous + (1.0 - self.decay) * loss)

    @property
    def final_ema(self) -> Optional[float]:
        return self.ema[-1] if self.ema else None

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"step": step + 1, "loss": loss, "loss_ema": ema}
            for step, (loss, ema) in enumerate(zip(self.losses, self.ema))
        ]


def _check_data(model_shape: Tuple[int, ...], data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim != len(model_shape) + 1 or data.shape[0] == 0:
        raise InvalidInputError(
            f"Training data must be a non-empty stack of {model_shape} fields, "
            f"got {data.shape}"
        )
    if tuple(data.shape[1:]) != model_shape:
        raise InvalidInputError(
            f"Training fields have shape {data.shape[1:]}, expected {model_shape}"
        )
    return data


def fit_linear(
    model: LinearScoreModel,
    data: np.ndarray,
    samples_per_step: int,
    rng: np.random.Generator,
) -> LinearScoreModel:
    """Fit every step's diagonal affine map by least squares on fresh samples.

    For each step ``i`` and frequency ``k`` the pairs ``(x_bar_i, eps_bar)`` from
    ``samples_per_step`` marginal draws give ``scale = S_xe / S_xx`` and
    ``offset = mean(eps) - scale * mean(x)``. Frequencies whose design variance
    collapses are solved with the ridge term ``RIDGE_FALLBACK``.

    Raises:
        InvalidParameterError: If samples_per_step < 2
        InvalidInputError: If the data do not match the model's field shape
    """
    s = model.schedule
    if samples_per_step < 2:
        raise InvalidParameterError(
            f"samples_per_step must be >= 2, got {samples_per_step}"
        )
    data = _check_data(s.field_shape, data)

    degenerate = 0
    for i in range(1, s.n_steps + 1):
        refs = rng.integers(0, data.shape[0], size=samples_per_step)
        x0 = SpectralField(s.operator, s.ndim, pixel=data[refs])
        sample = marginal_sample(s, x0, i, rng=rng)
        x_bar = sample.state.spectral
        eps_bar = to_spectral(s.operator, sample.require_eps(), s.ndim)

        x_mean = x_bar.mean(axis=0)
        e_mean = eps_bar.mean(axis=0)
        s_xx = np.sum((x_bar - x_mean) ** 2, axis=0)
        s_xe = np.sum((x_bar - x_mean) * (eps_bar - e_mean), axis=0)
        collapsed = s_xx / samples_per_step < _DEGENERATE_VARIANCE
        degenerate += int(np.count_nonzero(collapsed))
        scale = s_xe / (s_xx + np.where(collapsed, RIDGE_FALLBACK, 0.0))
        model.set_step(i, scale, e_mean - scale * x_mean)
        training_steps.inc()

    if degenerate:
        logger.warning(
            f"Ridge fallback used for {degenerate} step/frequency pairs "
            f"with vanishing design variance"
        )
    logger.info(f"Fitted linear model over {s.n_steps} steps")
    return model


def gradient_check(
    model: MLPScoreModel,
    batch: ForwardSample,
    rng: np.random.Generator,
    n_coords: int = 32,
    h: float = GRADIENT_CHECK_STEP,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    The relative error of a coordinate is ``|g - g_fd| / max(|g|, |g_fd|, 1e-3)``;
    ``n_coords`` coordinates are drawn without replacement.
    """
    theta = model.theta
    _, grad = model.loss_and_grad(batch, theta)
    coords = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)

    worst = 0.0
    for coord in coords:
        shifted = theta.copy()
        shifted[coord] = theta[coord] + h
        loss_plus = model.loss(batch, shifted)
        shifted[coord] = theta[coord] - h
        loss_minus = model.loss(batch, shifted)
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        denominator = max(abs(grad[coord]), abs(numeric), GRADIENT_CHECK_FLOOR)
        worst = max(worst, abs(grad[coord] - numeric) / denominator)
    return worst


def train_mlp(
    model: MLPScoreModel,
    data: np.ndarray,
    steps: int,
    optimizer: OptimizerConfig,
    rng: np.random.Generator,
    check_gradients: bool = True,
) -> Tuple[MLPScoreModel, TrainingHistory]:
    """Minimize the simple epsilon loss with Adam on fresh minibatches.

    Args:
        model: Network to train in place
        data: Training fields (M, *field_shape)
        steps: Number of optimizer steps; 0 leaves the parameters untouched
        optimizer: Adam settings and batch size
        rng: Random generator for batches and the gradient check
        check_gradients: Run :func:`gradient_check` before the first step

    Returns:
        Tuple (model, history)

    Raises:
        InvalidStateError: If the gradient check fails
        NonFiniteError: If the loss becomes NaN or infinite
    """
    s = model.schedule
    if steps < 0:
        raise InvalidParameterError(f"steps must be >= 0, got {steps}")
    data = _check_data(s.field_shape, data)
    history = TrainingHistory()

    if check_gradients:
        check_batch = draw_training_batch(s, data, min(optimizer.batch_size, 16), rng)
        error = gradient_check(model, check_batch, rng)
        logger.debug(f"Gradient check at initialization: max rel. error {error:.2e}")
        if error > GRADIENT_CHECK_TOLERANCE:
            raise InvalidStateError(
                f"Gradient check failed: max relative error {error:.2e} exceeds "
                f"{GRADIENT_CHECK_TOLERANCE:.0e}"
            )

    adam = Adam(optimizer, model.n_params)
    report_every = max(1, steps // 10)
    for step in range(1, steps + 1):
        batch = draw_training_batch(s, data, optimizer.batch_size, rng)
        loss, grad = model.loss_and_grad(batch)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite training loss at step {step}", step=step)
        model.theta = adam.step(model.theta, grad)
        history.record(loss)
        training_steps.inc()
        if step % report_every == 0 or step == steps:
            logger.info(
                f"MLP step {step}/{steps}: loss {loss:.4f}, "
                f"moving average {history.final_ema:.4f}"
            )
    return model, history
