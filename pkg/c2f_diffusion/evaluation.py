"""Desk-scale evaluation: Gaussian fits, Gaussian-Frechet distance and band energies.

The distance reported here is the Frechet distance between Gaussian fits of raw
pixel values. It is a stand-in for FID and is never labelled as such.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from c2f_diffusion.diffusion.spectral import BlurOperator, SpectralField
from c2f_diffusion.exceptions import InvalidInputError, InvalidParameterError
from c2f_diffusion.utils.logging import get_logger

logger = get_logger(__name__)

# Added to both covariances before taking matrix square roots
COVARIANCE_REGULARIZER = 1e-8


@dataclass(frozen=True)
class GaussianFit:
    """Empirical mean and unbiased covariance of flattened fields.

    Attributes:
        mean: Flattened mean, length D
        cov: D x D symmetric covariance
        count: Number of samples the fit was computed from
        field_shape: Shape of one sample before flattening
    """

    mean: np.ndarray
    cov: np.ndarray
    count: int
    field_shape: Tuple[int, ...]

    @property
    def dim(self) -> int:
        return int(self.mean.size)


@dataclass(frozen=True)
class MomentErrors:
    mean_max_abs: float
    cov_rel_frobenius: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "mean_max_abs": self.mean_max_abs,
            "cov_rel_frobenius": self.cov_rel_frobenius,
        }


def fit_gaussian(samples: np.ndarray, field_ndim: Optional[int] = None) -> GaussianFit:
    """Fit a Gaussian to a stack of samples.

    Args:
        samples: Array of shape (S, *field_shape)
        field_ndim: Rank of one sample; defaults to ``samples.ndim - 1``

    Returns:
        Gaussian fit over the flattened samples

    Raises:
        InvalidInputError: If fewer than two samples are given
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim < 1 or samples.shape[0] < 2:
        raise InvalidInputError(
            f"Need at least 2 samples to fit a Gaussian, got shape {samples.shape}"
        )
    if field_ndim is None:
        field_ndim = samples.ndim - 1
    field_shape = tuple(samples.shape[samples.ndim - field_ndim :])
    flat = samples.reshape(samples.shape[0], -1)

    mean = flat.mean(axis=0)
    cov = np.atleast_2d(np.cov(flat, rowvar=False, ddof=1))
    cov = 0.5 * (cov + cov.T)
    return GaussianFit(mean=mean, cov=cov, count=flat.shape[0], field_shape=field_shape)


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = linalg.eigh(matrix)
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def frechet_distance(a: GaussianFit, b: GaussianFit) -> float:
    """Frechet distance ``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The cross term is evaluated as ``tr((S_a^(1/2) S_b S_a^(1/2))^(1/2))``, which
    keeps every square root symmetric; negative eigenvalues are clamped at zero.

    Raises:
        InvalidParameterError: If the fits have different dimensions
    """
    if a.dim != b.dim:
        raise InvalidParameterError(
            f"Cannot compare Gaussian fits of dimension {a.dim} and {b.dim}"
        )

    regularizer = COVARIANCE_REGULARIZER * np.eye(a.dim)
    cov_a = a.cov + regularizer
    cov_b = b.cov + regularizer

    sqrt_a = _sqrtm_psd(cov_a)
    middle = sqrt_a @ cov_b @ sqrt_a
    middle = 0.5 * (middle + middle.T)
    cross = np.sum(np.sqrt(np.clip(linalg.eigvalsh(middle), 0.0, None)))

    diff = a.mean - b.mean
    distance = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(distance, 0.0)


def moment_errors(fit: GaussianFit, reference: GaussianFit) -> MomentErrors:
    """Max-abs mean error and relative Frobenius covariance error against a reference.

    Raises:
        InvalidParameterError: If the fits have different dimensions
    """
    if fit.dim != reference.dim:
        raise InvalidParameterError(
            f"Cannot compare Gaussian fits of dimension {fit.dim} and {reference.dim}"
        )
    ref_norm = float(np.linalg.norm(reference.cov))
    cov_err = float(np.linalg.norm(fit.cov - reference.cov))
    return MomentErrors(
        mean_max_abs=float(np.max(np.abs(fit.mean - reference.mean))),
        cov_rel_frobenius=cov_err / ref_norm if ref_norm > 0 else cov_err,
    )


def cluster_assignment_rate(
    samples: np.ndarray, centers: np.ndarray, rel_tol: float = 0.1
) -> float:
    """Fraction of samples within ``rel_tol * |c|`` of their nearest center ``c``.

    Args:
        samples: Array (S, *field_shape)
        centers: Array (K, *field_shape)
        rel_tol: Relative radius around each center

    Returns:
        Fraction in [0, 1]
    """
    samples = np.asarray(samples, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if samples.shape[0] == 0:
        raise InvalidInputError("No samples to assign")
    flat = samples.reshape(samples.shape[0], -1)
    flat_centers = centers.reshape(centers.shape[0], -1)
    if flat.shape[1] != flat_centers.shape[1]:
        raise InvalidParameterError(
            f"Samples of size {flat.shape[1]} vs centers of size "
            f"{flat_centers.shape[1]}"
        )

    distances = np.linalg.norm(flat[:, None, :] - flat_centers[None, :, :], axis=-1)
    nearest = np.argmin(distances, axis=1)
    radius = rel_tol * np.linalg.norm(flat_centers, axis=1)[nearest]
    hits = distances[np.arange(flat.shape[0]), nearest] < radius
    return float(np.mean(hits))


def frequency_bands(op: BlurOperator, ndim: int, n_bands: int) -> np.ndarray:
    """Label every frequency with its band; band 0 holds the largest eigenvalues.

    Bands are cut at quantiles of the eigenvalues of the field's own rank. For
    1D fields these are the 1D eigenvalues ``d_k``. For images they are the
    separable products ``d_a d_b`` of the 2D blur, so each band holds about the
    same share of the image's frequencies and band 0 holds the frequencies
    closest to DC. The label is a function of the eigenvalue alone, so degenerate
    eigenvalues always share a band (some bands may be empty).

    Raises:
        InvalidParameterError: If n_bands < 2
    """
    if n_bands < 2:
        raise InvalidParameterError(f"n_bands must be >= 2, got {n_bands}")
    eigvals = op.eigenvalues(ndim)
    levels = 1.0 - np.arange(1, n_bands) / n_bands
    thresholds = np.quantile(eigvals.ravel(), levels)
    return np.sum(eigvals[..., None] < thresholds, axis=-1)


def band_energy(op: BlurOperator, x: SpectralField, n_bands: int) -> np.ndarray:
    """Squared norm of the rotated coefficients per frequency band.

    Returns:
        Array of shape ``x.batch_shape + (n_bands,)``; bands sum to ``|x|^2``
    """
    labels = frequency_bands(op, x.ndim, n_bands)
    power = x.spectral**2
    axes = tuple(range(power.ndim - x.ndim, power.ndim))
    energies = [
        np.sum(np.where(labels == band, power, 0.0), axis=axes)
        for band in range(n_bands)
    ]
    return np.stack(energies, axis=-1)


def band_retention(energy: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Per-band energy ratio; NaN where the reference band is empty."""
    energy = np.asarray(energy, dtype=float)
    reference = np.asarray(reference, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(reference > 0, reference, 1.0)
        return np.where(reference > 0, energy / safe, np.nan)
