"""Noise schedule, blur schedule and the per-frequency diagonals they induce.

Indices follow the forward chain: step ``i`` maps ``x_{i-1}`` to ``x_i`` for
``i = 1..N``. In the eigenbasis of the blur every schedule matrix is diagonal:

    A_i    = (1 - beta_i) * d^(2 f(i))
    B_i    = 1 - A_i
    Abar_i = prod_{j<=i} A_j = alpha_bar_i * d^(2 F(i)),  F(i) = sum_{j<=i} f(j)

where ``d`` are the blur eigenvalues (``1 - d`` for the fine-to-coarse ablation).
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple, Union

import numpy as np

from c2f_diffusion.diffusion.spectral import BlurOperator, SpectralField, apply_power
from c2f_diffusion.exceptions import InvalidParameterError
from c2f_diffusion.utils.logging import get_logger

logger = get_logger(__name__)

DEFAULT_N_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

StepIndex = Union[int, np.ndarray]


class BlurType(str, Enum):
    """Functional forms of the blur schedule f(i)."""

    ZERO = "zero"
    LOG = "log"
    QUARTIC = "quartic"


def as_step_index(i: StepIndex, low: int, high: int) -> np.ndarray:
    index = np.asarray(i)
    if index.dtype.kind not in "iu":
        raise InvalidParameterError(f"Step index must be integral, got {index.dtype}")
    if index.size and (index.min() < low or index.max() > high):
        raise InvalidParameterError(
            f"Step index out of range [{low}, {high}]: "
            f"min {index.min()}, max {index.max()}"
        )
    return index


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving noise schedule beta_1..beta_N.

    Arrays are stored zero-based (``betas[0]`` is beta_1); use :meth:`beta` and
    :meth:`alpha_bar` for one-based access, where ``alpha_bar(0) == 1``.
    """

    betas: np.ndarray = field(repr=False)
    _alpha_bars_padded: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=float)
        if betas.ndim != 1 or betas.size == 0:
            raise InvalidParameterError("Noise schedule needs at least one beta")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise InvalidParameterError("Every beta must lie strictly inside (0, 1)")
        betas.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        padded = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        padded.setflags(write=False)
        object.__setattr__(self, "_alpha_bars_padded", padded)

    @property
    def n_steps(self) -> int:
        return int(self.betas.size)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return self._alpha_bars_padded[1:]

    def beta(self, i: StepIndex) -> np.ndarray:
        index = as_step_index(i, 1, self.n_steps)
        return self.betas[index - 1]

    def alpha_bar(self, i: StepIndex) -> np.ndarray:
        return self._alpha_bars_padded[as_step_index(i, 0, self.n_steps)]


def linear_betas(
    n_steps: int = DEFAULT_N_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linear ramp from beta_start (i=1) to beta_end (i=N).

    Raises:
        InvalidParameterError: Unless 0 < beta_start <= beta_end < 1 and N >= 1
    """
    if n_steps < 1:
        raise InvalidParameterError(f"n_steps must be >= 1, got {n_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidParameterError(
            f"Need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    return NoiseSchedule(np.linspace(beta_start, beta_end, n_steps))


@dataclass(frozen=True)
class BlurSchedule:
    """Blur exponents f(0..N) with f(0) = 0, and their running sums F(0..N)."""

    f_type: BlurType
    f_end: float
    values: np.ndarray = field(repr=False)
    cumsum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        cumsum = np.cumsum(self.values)
        cumsum.setflags(write=False)
        object.__setattr__(self, "cumsum", cumsum)

    @property
    def n_steps(self) -> int:
        return int(self.values.size - 1)

    def f(self, i: StepIndex) -> np.ndarray:
        return self.values[as_step_index(i, 0, self.n_steps)]

    def F(self, i: StepIndex) -> np.ndarray:
        return self.cumsum[as_step_index(i, 0, self.n_steps)]


def blur_schedule(
    f_type: Union[BlurType, str], f_end: float, n_steps: int
) -> BlurSchedule:
    """Build f(i) for i = 0..N.

    quartic: ``f(i) = f_end (i/N)^4``; log: ``f(i) = f_end log(i) / log(N)``;
    zero: ``f = 0`` (standard diffusion).

    Raises:
        InvalidParameterError: On negative f_end, N < 1 or unknown f_type
    """
    try:
        f_type = BlurType(f_type)
    except ValueError as e:
        raise InvalidParameterError(f"Unknown blur schedule type '{f_type}'") from e
    if f_end < 0:
        raise InvalidParameterError(f"f_end must be >= 0, got {f_end}")
    if n_steps < 1:
        raise InvalidParameterError(f"n_steps must be >= 1, got {n_steps}")

    steps = np.arange(n_steps + 1, dtype=float)
    if f_type is BlurType.ZERO:
        if f_end != 0:
            logger.debug(f"Ignoring f_end={f_end} for the zero blur schedule")
        f_end = 0.0
        values = np.zeros(n_steps + 1)
    elif f_type is BlurType.QUARTIC:
        values = f_end * (steps / n_steps) ** 4
    elif n_steps == 1:
        values = np.array([0.0, f_end])
    else:
        values = np.zeros(n_steps + 1)
        values[1:] = f_end * np.log(steps[1:]) / math.log(n_steps)

    values[0] = 0.0
    values[-1] = f_end
    values.setflags(write=False)
    return BlurSchedule(f_type=f_type, f_end=float(f_end), values=values)


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise and blur schedules bound to a blur operator and a field rank.

    Attributes:
        noise: Noise schedule
        blur: Blur schedule (same N)
        operator: Blur operator supplying U and d
        ndim: Spatial rank of the fields (1 or 2)
        fine_to_coarse: Replace D by I - D (destroy low frequencies first)
        unit_score_exponent: Use the exponent -1 (instead of -1/2) when
            converting between epsilon and score
    """

    noise: NoiseSchedule
    blur: BlurSchedule
    operator: BlurOperator
    ndim: int = 2
    fine_to_coarse: bool = False
    unit_score_exponent: bool = False
    spectrum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.noise.n_steps != self.blur.n_steps:
            raise InvalidParameterError(
                f"Noise schedule has {self.noise.n_steps} steps but blur schedule "
                f"has {self.blur.n_steps}"
            )
        spectrum = np.array(self.operator.eigenvalues(self.ndim), dtype=float)
        if self.fine_to_coarse:
            spectrum = np.clip(1.0 - spectrum, 0.0, 1.0)
        spectrum.setflags(write=False)
        object.__setattr__(self, "spectrum", spectrum)

    @property
    def n_steps(self) -> int:
        return self.noise.n_steps

    @property
    def field_shape(self) -> Tuple[int, ...]:
        return self.operator.field_shape(self.ndim)

    @property
    def score_exponent(self) -> float:
        """Exponent e in ``score = -U (I - Abar)^(-e) U^T eps``."""
        return 1.0 if self.unit_score_exponent else 0.5

    def _expand(self, coefficient: np.ndarray) -> np.ndarray:
        return np.reshape(coefficient, coefficient.shape + (1,) * self.ndim)

    def spectrum_power(self, p: StepIndex) -> np.ndarray:
        """``d^p`` for scalar or batched exponents, field-shaped."""
        return self.spectrum ** self._expand(np.asarray(p, dtype=float))

    def diag_A(self, i: StepIndex) -> np.ndarray:
        index = as_step_index(i, 1, self.n_steps)
        alpha = self._expand(1.0 - self.noise.beta(index))
        return alpha * self.spectrum_power(2.0 * self.blur.f(index))

    def diag_B(self, i: StepIndex) -> np.ndarray:
        return 1.0 - self.diag_A(i)

    def diag_Abar(self, i: StepIndex) -> np.ndarray:
        """Closed form ``alpha_bar_i * d^(2 F(i))``; ``i = 0`` gives ones."""
        index = as_step_index(i, 0, self.n_steps)
        alpha_bar = self._expand(self.noise.alpha_bar(index))
        return alpha_bar * self.spectrum_power(2.0 * self.blur.F(index))

    def diag_Abar_product(self, i: int) -> np.ndarray:
        """Explicit running product of diag(A_j); kept as a reference for diag_Abar."""
        index = int(as_step_index(i, 0, self.n_steps))
        product = np.ones(self.field_shape)
        for j in range(1, index + 1):
            product = product * self.diag_A(j)
        return product

    def blur_power(self, x: SpectralField, p: float) -> SpectralField:
        """Apply the (possibly fine-to-coarse) blur matrix raised to ``p``."""
        if not self.fine_to_coarse:
            return apply_power(self.operator, x, p)
        if p == 0:
            return x
        return x.with_spectral(x.spectral * self.spectrum**p)

    def scale_spectral(self, x: SpectralField, diagonal: np.ndarray) -> SpectralField:
        """Return ``U diag(diagonal) U^T x``."""
        return x.with_spectral(x.spectral * diagonal)

    def make_field(self, pixel: np.ndarray) -> SpectralField:
        """Wrap pixel values of this schedule's field shape."""
        return SpectralField(self.operator, self.ndim, pixel=pixel)

    def terminal_retention(self) -> float:
        """``max_k [Abar_N]_k``: how far x_N is from pure noise."""
        return float(np.max(self.diag_Abar(self.n_steps)))


def diag_A(s: DiffusionSchedule, i: StepIndex) -> np.ndarray:
    return s.diag_A(i)


def diag_B(s: DiffusionSchedule, i: StepIndex) -> np.ndarray:
    return s.diag_B(i)


def diag_Abar(s: DiffusionSchedule, i: StepIndex) -> np.ndarray:
    return s.diag_Abar(i)


def make_schedule(
    operator: BlurOperator,
    ndim: int = 2,
    n_steps: int = DEFAULT_N_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    f_type: Union[BlurType, str] = BlurType.QUARTIC,
    f_end: float = 0.14,
    fine_to_coarse: bool = False,
    unit_score_exponent: bool = False,
) -> DiffusionSchedule:
    """Assemble a :class:`DiffusionSchedule` from scalar settings."""
    return DiffusionSchedule(
        noise=linear_betas(n_steps, beta_start, beta_end),
        blur=blur_schedule(f_type, f_end, n_steps),
        operator=operator,
        ndim=ndim,
        fine_to_coarse=fine_to_coarse,
        unit_score_exponent=unit_score_exponent,
    )
