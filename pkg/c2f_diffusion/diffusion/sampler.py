"""Reverse deblurring sampler.

One reverse step from ``x_i`` to ``x_{i-1}`` reads, in the eigenbasis,

    x_{i-1} = x_i + H(x_i) + B_j s_theta(x_i, i) + B_j^(1/2) z

where ``H`` is the unnormalized Gaussian high-pass of schedule index ``j``, i.e.
the deterministic part is unsharp masking. ``j`` is the forward step being
inverted: ``j = i`` by default, ``j = min(i + 1, N)`` with ``shifted_indexing``.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from c2f_diffusion.diffusion.forward import (
    DEFAULT_N_BANDS,
    Direction,
    Trajectory,
    high_pass,
    markov_step_blur,
    standard_forward_step,
)
from c2f_diffusion.diffusion.predictors.base import ScoreModel
from c2f_diffusion.diffusion.predictors.oracle import rotation_matrix
from c2f_diffusion.diffusion.schedule import (
    BlurType,
    DiffusionSchedule,
    as_step_index,
)
from c2f_diffusion.diffusion.spectral import SpectralField
from c2f_diffusion.evaluation import band_energy, band_retention
from c2f_diffusion.exceptions import InvalidParameterError, NonFiniteError
from c2f_diffusion.utils.logging import get_logger
from c2f_diffusion.utils.telemetry import reverse_steps

logger = get_logger(__name__)

# Largest flattened field size for which the dense contract check is run
CONTRACT_MAX_DIM = 1024


class FinalStepNoise(str, Enum):
    """Whether the step producing ``x_0`` adds noise."""

    NOISE = "noise"
    NO_NOISE_AT_LAST_STEP = "no-noise-at-last-step"


@dataclass
class SamplerConfig:
    """Everything a reverse chain needs.

    Attributes:
        model: Score model
        schedule: Diffusion schedule
        n_steps: Number of reverse steps; must equal the schedule's N
        final_step_noise: Noise policy for the step producing ``x_0``
        shifted_indexing: Use schedule index ``i + 1`` (clamped to N) in step ``i``
        seed: Seed of the single generator driving all chains
        stride: Record every stride-th state in :func:`sample`
        n_bands: Number of frequency bands in the diagnostics
    """

    model: ScoreModel
    schedule: DiffusionSchedule
    n_steps: Optional[int] = None
    final_step_noise: Union[
        FinalStepNoise, str
    ] = FinalStepNoise.NO_NOISE_AT_LAST_STEP
    shifted_indexing: bool = False
    seed: int = 0
    stride: int = 100
    n_bands: int = DEFAULT_N_BANDS

    def __post_init__(self) -> None:
        try:
            self.final_step_noise = FinalStepNoise(self.final_step_noise)
        except ValueError as e:
            raise InvalidParameterError(
                f"Unknown final step noise policy '{self.final_step_noise}'"
            ) from e
        if self.n_steps is None:
            self.n_steps = self.schedule.n_steps
        if self.n_steps != self.schedule.n_steps:
            raise InvalidParameterError(
                f"Sampler runs all {self.schedule.n_steps} schedule steps, "
                f"got n_steps={self.n_steps}"
            )
        if self.model.schedule.n_steps != self.schedule.n_steps:
            raise InvalidParameterError(
                f"Model schedule has {self.model.schedule.n_steps} steps, "
                f"sampler schedule has {self.schedule.n_steps}"
            )
        if self.stride < 1:
            raise InvalidParameterError(f"stride must be >= 1, got {self.stride}")

    def schedule_index(self, i: int) -> int:
        """Schedule index used by the reverse step producing ``x_{i-1}``."""
        if self.shifted_indexing:
            return min(i + 1, self.schedule.n_steps)
        return i

    def adds_noise(self, i: int) -> bool:
        if i > 1:
            return True
        return self.final_step_noise is FinalStepNoise.NOISE


def _deterministic_and_noise(
    cfg: SamplerConfig,
    x_i: SpectralField,
    i: int,
    rng: Optional[np.random.Generator],
    z: Optional[np.ndarray],
) -> Tuple[int, np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Shared part of both step forms: ``(i, B_j, x_i + H(x_i), B_j^(1/2) z)``."""
    index = int(as_step_index(i, 1, cfg.schedule.n_steps))
    j = cfg.schedule_index(index)
    b = cfg.schedule.diag_B(j)
    unsharp = x_i.spectral + high_pass(cfg.schedule, x_i, j - 1).spectral
    if not cfg.adds_noise(index):
        return index, b, unsharp, None
    if z is None:
        if rng is None:
            raise InvalidParameterError("Reverse step needs an rng or a noise draw")
        z = rng.standard_normal(x_i.pixel.shape)
    z_bar = x_i.with_pixel(z).spectral
    return index, b, unsharp, np.sqrt(b) * z_bar


def reverse_step_score(
    cfg: SamplerConfig,
    x_i: SpectralField,
    i: int,
    rng: Optional[np.random.Generator] = None,
    z: Optional[np.ndarray] = None,
) -> SpectralField:
    """``x_{i-1} = x_i + H(x_i) + U B U^T s_theta(x_i, i) + U B^(1/2) U^T z``.

    Args:
        cfg: Sampler configuration
        x_i: Current state(s)
        i: Step in 1..N
        rng: Source of ``z`` when it is not given
        z: Pixel-space standard normal draw shaped like ``x_i``

    Raises:
        InvalidParameterError: If ``i`` is out of range
    """
    index, b, unsharp, noise = _deterministic_and_noise(cfg, x_i, i, rng, z)
    update = unsharp + b * cfg.model.predict_score(x_i, index).spectral
    if noise is not None:
        update = update + noise
    return x_i.with_spectral(update)


def reverse_step_eps(
    cfg: SamplerConfig,
    x_i: SpectralField,
    i: int,
    rng: Optional[np.random.Generator] = None,
    z: Optional[np.ndarray] = None,
) -> SpectralField:
    """Epsilon form ``x_i + H(x_i) - U B (I - Abar_i)^(-e) U^T eps_theta + noise``.

    Pathwise equal to :func:`reverse_step_score` for the same ``z``.
    """
    index, b, unsharp, noise = _deterministic_and_noise(cfg, x_i, i, rng, z)
    s = cfg.schedule
    eps_bar = cfg.model.predict_eps(x_i, index).spectral
    scale = (1.0 - s.diag_Abar(index)) ** s.score_exponent
    update = unsharp - b * eps_bar / scale
    if noise is not None:
        update = update + noise
    return x_i.with_spectral(update)


def standard_reverse_step(
    x: np.ndarray,
    beta: float,
    score: np.ndarray,
    z: Optional[np.ndarray] = None,
) -> np.ndarray:
    """VP reverse diffusion step ``(2 - sqrt(1-beta)) x + beta s + sqrt(beta) z``."""
    update = (2.0 - np.sqrt(1.0 - beta)) * x + beta * score
    if z is not None:
        update = update + np.sqrt(beta) * z
    return update


def _denoised_mean(cfg: SamplerConfig, x: SpectralField, i: int) -> SpectralField:
    """Blurred clean estimate ``x_bar + (1 - Abar_i) s_theta(x, i)``."""
    score = cfg.model.predict_score(x, i).spectral
    return x.with_spectral(x.spectral + (1.0 - cfg.schedule.diag_Abar(i)) * score)


def sample(
    cfg: SamplerConfig, batch_size: int, x_init: Optional[np.ndarray] = None
) -> Trajectory:
    """Run ``batch_size`` chains from ``x_N ~ N(0, I)`` down to ``x_0``.

    States are recorded at ``N`` and at every step divisible by ``stride``. The
    metadata row of a recorded step holds the band energy of the denoised mean
    (the final samples themselves at step 0) summed over the batch, and its
    retention relative to the final samples. In a coarse-to-fine run the low band
    reaches a retention near 1 before the high band does.

    Args:
        cfg: Sampler configuration; its seed drives the init and all noise draws
        batch_size: Number of chains
        x_init: Optional starting states replacing the Gaussian init

    Raises:
        InvalidParameterError: If batch_size < 1
        NonFiniteError: If a state becomes NaN or infinite
    """
    if batch_size < 1:
        raise InvalidParameterError(f"batch_size must be >= 1, got {batch_size}")
    s = cfg.schedule
    rng = np.random.default_rng(cfg.seed)
    logger.info(
        f"Sampling {batch_size} chains over {s.n_steps} steps; "
        f"terminal retention max_k Abar_N = {s.terminal_retention():.3e}"
    )

    shape = (batch_size,) + s.field_shape
    init = rng.standard_normal(shape) if x_init is None else np.asarray(x_init)
    x = s.make_field(init)

    def band_total(field: SpectralField) -> np.ndarray:
        energy = band_energy(s.operator, field, cfg.n_bands)
        return energy.reshape(-1, cfg.n_bands).sum(axis=0)

    states: List[SpectralField] = [x]
    steps: List[int] = [s.n_steps]
    energies: List[np.ndarray] = [band_total(_denoised_mean(cfg, x, s.n_steps))]

    for i in range(s.n_steps, 0, -1):
        x = reverse_step_score(cfg, x, i, rng=rng)
        reverse_steps.inc()
        if not np.all(np.isfinite(x.spectral)):
            raise NonFiniteError(f"Non-finite sampler state at step {i}", step=i)
        previous = i - 1
        if previous % cfg.stride == 0:
            states.append(x)
            steps.append(previous)
            if previous > 0:
                energies.append(band_total(_denoised_mean(cfg, x, previous)))
            else:
                energies.append(band_total(x))

    final = energies[-1]
    metadata = []
    for step, energy in zip(steps, energies):
        retention = band_retention(energy, final)
        row: Dict[str, float] = {
            "step": float(step),
            "f": float(s.blur.f(step)),
            "F": float(s.blur.F(step)),
            "alpha_bar": float(s.noise.alpha_bar(step)),
        }
        for band in range(cfg.n_bands):
            row[f"signal_energy_band{band}"] = float(energy[band])
            row[f"retention_band{band}"] = float(retention[band])
        metadata.append(row)

    return Trajectory(
        states=states, steps=steps, direction=Direction.REVERSE, metadata=metadata
    )


@dataclass(frozen=True)
class ContractReport:
    """Largest deviations from the stochastic difference equation templates.

    Attributes:
        forward: Blur forward step vs ``x + f_i(x) + G_i z``
        reverse: Same-index reverse step vs ``x - f_i(x) + G_i G_i^T s + G_i z``
        reverse_shifted_indexing: Shifted ``i + 1`` indexing vs the same template
        standard_forward: Forward step vs the VP step (``f = 0`` schedules only)
        standard_reverse: Reverse step vs the VP reverse step (``f = 0`` only)
        steps_checked: Number of step indices evaluated
    """

    forward: float
    reverse: float
    reverse_shifted_indexing: float
    standard_forward: Optional[float]
    standard_reverse: Optional[float]
    steps_checked: int

    def max_deviation(self) -> float:
        """Worst deviation among the checks that must hold exactly."""
        checks = [
            self.forward,
            self.reverse,
            self.standard_forward,
            self.standard_reverse,
        ]
        return max(value for value in checks if value is not None)

    def rows(self) -> List[Dict[str, Union[str, float]]]:
        rows: List[Dict[str, Union[str, float]]] = [
            {"check": "forward_template", "max_deviation": self.forward},
            {"check": "reverse_template", "max_deviation": self.reverse},
            {
                "check": "reverse_template_shifted_indexing",
                "max_deviation": self.reverse_shifted_indexing,
            },
        ]
        if self.standard_forward is not None:
            rows.append(
                {"check": "standard_forward", "max_deviation": self.standard_forward}
            )
        if self.standard_reverse is not None:
            rows.append(
                {"check": "standard_reverse", "max_deviation": self.standard_reverse}
            )
        return rows


class _RandomLinearScore(ScoreModel):
    """Fixed random diagonal epsilon predictor used by the contract check."""

    def __init__(self, schedule: DiffusionSchedule, rng: np.random.Generator):
        super().__init__(schedule)
        self.gains = rng.standard_normal(schedule.field_shape)

    @classmethod
    def get_model_type(cls) -> str:
        return "random-linear"

    def predict_eps(self, x: SpectralField, i) -> SpectralField:
        return x.with_spectral(self.gains * x.spectral)


def _dense_blur(s: DiffusionSchedule, power: float) -> np.ndarray:
    """Dense matrix of the (fine-to-coarse) blur raised to ``power`` on flat fields."""
    if not s.fine_to_coarse:
        w = s.operator.matrix(power)
        return w if s.ndim == 1 else np.kron(w, w)
    r = rotation_matrix(s)
    return (r.T * s.spectrum.ravel() ** power) @ r


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh(matrix)
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def _template_matrices(s: DiffusionSchedule, i: int) -> Tuple[np.ndarray, np.ndarray]:
    """Dense ``K_i = sqrt(1-beta_i) W^f(i)`` and ``G_i = (I - K_i K_i^T)^(1/2)``."""
    k = np.sqrt(1.0 - float(s.noise.beta(i))) * _dense_blur(s, float(s.blur.f(i)))
    covariance = np.eye(k.shape[0]) - k @ k.T
    return k, _psd_sqrt(covariance)


def discretization_contract_check(
    schedule: DiffusionSchedule,
    n_states: int = 8,
    n_checked_steps: int = 20,
    seed: int = 0,
) -> ContractReport:
    """Compare both step implementations with ``x_i = x_{i-1} + f_i + G_i z``.

    With ``f_i(x) = K_i x - x`` (i.e. ``-H``) and ``G_i = C_i^(1/2)`` assembled as
    dense matrices on flattened fields, the forward step must equal the template
    and the reverse step must equal ``x - f_i(x) + G_i G_i^T s + G_i z`` with a
    random diagonal score model. The shifted ``i + 1`` indexing is evaluated
    against the same template and reported, not required to match. For ``f = 0``
    schedules both steps are also compared with the VP steps.

    Args:
        schedule: Schedule to check; dense matrices have ``n^(2 ndim)`` entries
        n_states: Random states per checked step
        n_checked_steps: Number of evenly spaced steps in 1..N to check
        seed: Seed of the random states, noise and random linear model
    """
    dim = int(np.prod(schedule.field_shape))
    if dim > CONTRACT_MAX_DIM:
        raise InvalidParameterError(
            f"Dense contract check supports fields of at most {CONTRACT_MAX_DIM} "
            f"values, got {dim}"
        )
    rng = np.random.default_rng(seed)
    n = schedule.n_steps
    grid = np.linspace(1, n, min(n, n_checked_steps)).astype(int)
    steps = sorted(set(grid.tolist()))
    model = _RandomLinearScore(schedule, rng)
    same_index = SamplerConfig(model, schedule, final_step_noise=FinalStepNoise.NOISE)
    shifted_config = SamplerConfig(
        model, schedule, final_step_noise=FinalStepNoise.NOISE, shifted_indexing=True
    )
    standard = schedule.blur.f_type is BlurType.ZERO
    shape = (n_states,) + schedule.field_shape

    def flat(values: np.ndarray) -> np.ndarray:
        return values.reshape(n_states, dim)

    def deviation(got: np.ndarray, expected: np.ndarray) -> float:
        return float(np.max(np.abs(flat(got) - flat(expected))))

    forward = reverse = shifted = 0.0
    std_forward = std_reverse = 0.0
    for i in steps:
        x = schedule.make_field(rng.standard_normal(shape))
        z = rng.standard_normal(shape)
        k, g = _template_matrices(schedule, i)
        x_flat = flat(x.pixel)
        drift = x_flat @ k.T - x_flat
        g_z = flat(z) @ g.T
        score = model.predict_score(x, i).pixel

        stepped = markov_step_blur(schedule, x, i, z=z).pixel
        forward = max(forward, deviation(stepped, x_flat + drift + g_z))

        expected = x_flat - drift + flat(score) @ (g @ g.T).T + g_z
        reversed_ = reverse_step_score(same_index, x, i, z=z).pixel
        reverse = max(reverse, deviation(reversed_, expected))
        shifted_step = reverse_step_score(shifted_config, x, i, z=z).pixel
        shifted = max(shifted, deviation(shifted_step, expected))

        if standard:
            beta = float(schedule.noise.beta(i))
            vp_forward = standard_forward_step(x.pixel, beta, z)
            std_forward = max(std_forward, deviation(stepped, vp_forward))
            vp_reverse = standard_reverse_step(x.pixel, beta, score, z)
            std_reverse = max(std_reverse, deviation(reversed_, vp_reverse))

    logger.info(
        f"Discretization contract over {len(steps)} steps: forward {forward:.2e}, "
        f"reverse {reverse:.2e}, shifted i+1 indexing {shifted:.2e}"
    )
    return ContractReport(
        forward=forward,
        reverse=reverse,
        reverse_shifted_indexing=shifted,
        standard_forward=std_forward if standard else None,
        standard_reverse=std_reverse if standard else None,
        steps_checked=len(steps),
    )
