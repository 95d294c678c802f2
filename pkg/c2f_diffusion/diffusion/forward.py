"""Forward chains of blur diffusion and their closed-form marginal.

Three equivalent views of one step ``x_{i-1} -> x_i`` are provided:

* :func:`markov_step_blur`: pixel space, ``sqrt(1-beta_i) W_i x + C_i^(1/2) z``
* :func:`markov_step_generalized`: rotated coordinates, ``A_i^(1/2) x + B_i^(1/2) z``
* :func:`standard_forward_step`: the variance-preserving step without blur

Under shared randomness (``z_bar = U^T z``) the first two agree pathwise, and
with ``f == 0`` both reduce to the third.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from c2f_diffusion.diffusion.schedule import DiffusionSchedule, StepIndex, as_step_index
from c2f_diffusion.diffusion.spectral import SpectralField, to_spectral
from c2f_diffusion.evaluation import band_energy, band_retention
from c2f_diffusion.exceptions import InvalidInputError, InvalidParameterError
from c2f_diffusion.utils.logging import get_logger

logger = get_logger(__name__)

DEFAULT_N_BANDS = 4


class Direction(str, Enum):
    FORWARD = "forward"
    REVERSE = "reverse"


@dataclass(frozen=True)
class ForwardSample:
    """A (batch of) marginal draws ``x_i`` with the noise that produced them.

    Attributes:
        step: Step index ``i``, scalar or one per batch item
        state: Noised field ``x_i``
        eps: Pixel-space standard normal draw of the marginal, ``None`` if unknown
        x0_ref: Index of the source datum per batch item, if known
    """

    step: np.ndarray
    state: SpectralField
    eps: Optional[np.ndarray] = field(default=None, repr=False)
    x0_ref: Optional[np.ndarray] = None

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.state.batch_shape

    def require_eps(self) -> np.ndarray:
        """Return the stored noise, or fail if the sample was built without it."""
        if self.eps is None:
            raise InvalidInputError(
                "Forward sample carries no stored epsilon; "
                "build it with marginal_sample"
            )
        return self.eps


@dataclass
class Trajectory:
    """Recorded states of a forward or reverse chain.

    ``states[k]`` is the chain at ``steps[k]``; ``metadata[k]`` holds scalar
    diagnostics for that step. Forward trajectories run 0..N, reverse N..0.
    """

    states: List[SpectralField]
    steps: List[int]
    direction: Direction
    metadata: List[Dict[str, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.states) != len(self.steps):
            raise InvalidParameterError(
                f"{len(self.states)} states recorded for {len(self.steps)} steps"
            )
        order = np.diff(self.steps)
        expected = order > 0 if self.direction is Direction.FORWARD else order < 0
        if not np.all(expected):
            raise InvalidParameterError(
                f"Steps {self.steps} are not ordered for a {self.direction.value} run"
            )
        shapes = {state.pixel.shape for state in self.states}
        if len(shapes) > 1:
            raise InvalidParameterError(f"Trajectory states differ in shape: {shapes}")

    def __len__(self) -> int:
        return len(self.states)

    def pixels(self) -> np.ndarray:
        """Stack of pixel states, shape ``(len, *batch, *field)``."""
        return np.stack([state.pixel for state in self.states])

    def metadata_rows(self) -> List[Dict[str, Any]]:
        return [dict(row) for row in self.metadata]


def _step(s: DiffusionSchedule, i: StepIndex) -> np.ndarray:
    return as_step_index(i, 1, s.n_steps)


def standard_forward_step(x: np.ndarray, beta: float, z: np.ndarray) -> np.ndarray:
    """Variance-preserving step ``sqrt(1-beta) x + sqrt(beta) z``."""
    return np.sqrt(1.0 - beta) * x + np.sqrt(beta) * z


def markov_step_blur(
    s: DiffusionSchedule,
    x_prev: SpectralField,
    i: int,
    rng: Optional[np.random.Generator] = None,
    z: Optional[np.ndarray] = None,
) -> SpectralField:
    """One blurring forward step in pixel space.

    ``x_i = sqrt(1-beta_i) W^f(i) x_{i-1} + U diag(sqrt(B_i)) U^T z`` where the noise
    covariance ``C_i = I - (1-beta_i) W_i^2`` keeps unit variance for unit inputs.

    Args:
        s: Diffusion schedule
        x_prev: State ``x_{i-1}``
        i: Step index in 1..N
        rng: Source of ``z`` when ``z`` is not given
        z: Pixel-space standard normal draw shaped like ``x_prev``

    Raises:
        InvalidParameterError: If ``i`` is out of range or neither rng nor z is given
    """
    index = int(_step(s, i))
    if z is None:
        if rng is None:
            raise InvalidParameterError("markov_step_blur needs an rng or a noise draw")
        z = rng.standard_normal(x_prev.pixel.shape)

    blurred = s.blur_power(x_prev, float(s.blur.f(index)))
    signal = np.sqrt(1.0 - s.noise.beta(index)) * blurred.pixel
    noise_field = SpectralField(s.operator, s.ndim, pixel=z)
    noise = s.scale_spectral(noise_field, np.sqrt(s.diag_B(index))).pixel
    return x_prev.with_pixel(signal + noise)


def markov_step_generalized(
    s: DiffusionSchedule,
    x_prev: SpectralField,
    i: int,
    rng: Optional[np.random.Generator] = None,
    z_bar: Optional[np.ndarray] = None,
) -> SpectralField:
    """One forward step on rotated coefficients: ``A_i^(1/2) x_bar + B_i^(1/2) z_bar``.

    Pass ``z_bar = U^T z`` to share randomness with :func:`markov_step_blur`.
    """
    index = int(_step(s, i))
    if z_bar is None:
        if rng is None:
            raise InvalidParameterError(
                "markov_step_generalized needs an rng or a noise draw"
            )
        z_bar = rng.standard_normal(x_prev.spectral.shape)

    coefficients = np.sqrt(s.diag_A(index)) * x_prev.spectral
    return x_prev.with_spectral(coefficients + np.sqrt(s.diag_B(index)) * z_bar)


def marginal_sample(
    s: DiffusionSchedule,
    x0: SpectralField,
    i: StepIndex,
    rng: Optional[np.random.Generator] = None,
    eps: Optional[np.ndarray] = None,
    x0_ref: Optional[np.ndarray] = None,
) -> ForwardSample:
    """Draw ``x_i = U Abar_i^(1/2) U^T x_0 + U (I - Abar_i)^(1/2) U^T eps`` directly.

    Args:
        s: Diffusion schedule
        x0: Clean field(s)
        i: Step index in 1..N; an array assigns one step per batch item
        rng: Source of ``eps`` when it is not given
        eps: Pixel-space standard normal draw shaped like ``x0``
        x0_ref: Optional dataset indices of the ``x0`` items

    Returns:
        Forward sample retaining ``eps``
    """
    index = _step(s, i)
    if eps is None:
        if rng is None:
            raise InvalidParameterError("marginal_sample needs an rng or a noise draw")
        eps = rng.standard_normal(x0.pixel.shape)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != x0.pixel.shape:
        raise InvalidParameterError(
            f"Noise shape {eps.shape} does not match field shape {x0.pixel.shape}"
        )

    abar = s.diag_Abar(index)
    eps_bar = to_spectral(s.operator, eps, s.ndim)
    coefficients = np.sqrt(abar) * x0.spectral + np.sqrt(1.0 - abar) * eps_bar
    state = x0.with_spectral(coefficients)
    return ForwardSample(step=index, state=state, eps=eps, x0_ref=x0_ref)


def high_pass(s: DiffusionSchedule, x: SpectralField, i: StepIndex) -> SpectralField:
    """Unnormalized Gaussian high-pass ``H(x, i) = x - sqrt(1-beta_{i+1}) W_{i+1} x``.

    Raises:
        InvalidParameterError: Unless 0 <= i <= N-1
    """
    index = as_step_index(i, 0, s.n_steps - 1)
    return s.scale_spectral(x, 1.0 - np.sqrt(s.diag_A(index + 1)))


def draw_training_batch(
    s: DiffusionSchedule,
    data: np.ndarray,
    count: int,
    rng: np.random.Generator,
    steps: Optional[StepIndex] = None,
) -> ForwardSample:
    """Draw ``count`` marginal samples at uniform steps from random data items.

    Args:
        s: Diffusion schedule
        data: Dataset array of shape (M, *field_shape)
        count: Batch size
        rng: Random generator
        steps: Fixed step(s); drawn uniformly from 1..N when omitted

    Raises:
        InvalidInputError: If the dataset is empty
    """
    data = np.asarray(data, dtype=float)
    if data.shape[0] == 0:
        raise InvalidInputError("Cannot draw a training batch from an empty dataset")
    if count < 1:
        raise InvalidParameterError(f"Batch size must be >= 1, got {count}")

    if steps is None:
        index = rng.integers(1, s.n_steps + 1, size=count)
    else:
        index = np.broadcast_to(as_step_index(steps, 1, s.n_steps), (count,)).copy()
    refs = rng.integers(0, data.shape[0], size=count)
    x0 = SpectralField(s.operator, s.ndim, pixel=data[refs])
    return marginal_sample(s, x0, index, rng=rng, x0_ref=refs)


def _band_row(
    s: DiffusionSchedule,
    step: int,
    signal: SpectralField,
    reference: np.ndarray,
    n_bands: int,
) -> Dict[str, float]:
    energy = band_energy(s.operator, signal, n_bands)
    energy = energy.reshape(-1, n_bands).sum(axis=0)
    retention = band_retention(energy, reference)
    row: Dict[str, float] = {
        "step": float(step),
        "f": float(s.blur.f(step)),
        "F": float(s.blur.F(step)),
        "alpha_bar": float(s.noise.alpha_bar(step)),
    }
    for band in range(n_bands):
        row[f"signal_energy_band{band}"] = float(energy[band])
        row[f"retention_band{band}"] = float(retention[band])
    low, high = retention[0], retention[-1]
    row["high_low_ratio"] = float(high / low) if low > 0 else float("nan")
    return row


def forward_trajectory(
    s: DiffusionSchedule,
    x0: SpectralField,
    rng: np.random.Generator,
    stride: int,
    n_bands: int = DEFAULT_N_BANDS,
) -> Trajectory:
    """Run the Markov chain from ``x_0`` to ``x_N`` and record every stride-th state.

    Recorded steps are ``0, stride, 2 stride, ...`` and always ``N``. Metadata per
    recorded step holds the band energy of the noiseless component
    ``U Abar_i^(1/2) U^T x_0`` summed over the batch, its retention relative to
    ``x_0`` and the ratio of high-band to low-band retention.

    Raises:
        InvalidParameterError: If stride < 1
    """
    if stride < 1:
        raise InvalidParameterError(f"stride must be >= 1, got {stride}")

    reference = band_energy(s.operator, x0, n_bands).reshape(-1, n_bands).sum(axis=0)
    states = [x0]
    steps = [0]
    metadata = [_band_row(s, 0, x0, reference, n_bands)]

    x = x0
    for i in range(1, s.n_steps + 1):
        x = markov_step_generalized(s, x, i, rng=rng)
        if i % stride == 0 or i == s.n_steps:
            noiseless = x0.with_spectral(np.sqrt(s.diag_Abar(i)) * x0.spectral)
            states.append(x)
            steps.append(i)
            metadata.append(_band_row(s, i, noiseless, reference, n_bands))

    logger.debug(
        f"Forward trajectory recorded {len(steps)} states, "
        f"final high/low retention ratio {metadata[-1]['high_low_ratio']:.3e}"
    )
    return Trajectory(
        states=states, steps=steps, direction=Direction.FORWARD, metadata=metadata
    )
