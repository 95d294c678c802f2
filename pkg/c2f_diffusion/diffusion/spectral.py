"""Separable circulant Gaussian blur and its eigendecomposition.

The blur matrix ``W`` acts along one axis as a symmetric circulant matrix, so it
is diagonalized by a real Fourier basis ``U``: ``W = U diag(d) U^T``. Images are
blurred separably (rows, then columns); the 2D eigenvalues are ``outer(d, d)``
and the 2D rotation is ``U^T X U``. A dense ``n^2 x n^2`` operator is never built.

Arrays handled here carry an explicit spatial rank (1 for vectors, 2 for images).
Any leading dimensions are batch dimensions.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from c2f_diffusion.exceptions import InvalidParameterError, InvalidStateError
from c2f_diffusion.utils.logging import get_logger

logger = get_logger(__name__)

DEFAULT_SIGMA = 0.4

# Above this size the dense eigensolver cross-check is skipped
DENSE_CHECK_MAX_N = 256

_CHECK_TOLERANCE = 1e-9


@dataclass(frozen=True)
class GaussianKernel1D:
    """Normalized, symmetric, odd-length Gaussian kernel."""

    sigma: float
    support: int
    weights: np.ndarray = field(repr=False)

    @property
    def center(self) -> int:
        return self.support // 2

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(self.support) - self.center


def default_support(sigma: float, axis_len: int) -> int:
    """Kernel length covering +-4 sigma, clipped to the largest odd size <= axis_len."""
    wanted = 2 * math.ceil(4.0 * sigma) + 1
    largest_odd = axis_len if axis_len % 2 == 1 else axis_len - 1
    return max(3, min(wanted, largest_odd))


def build_kernel(sigma: float, support: int) -> GaussianKernel1D:
    """Build a normalized Gaussian kernel.

    Args:
        sigma: Standard deviation in pixels
        support: Odd kernel length, at least 3

    Returns:
        Kernel whose weights sum to one

    Raises:
        InvalidParameterError: If sigma is not positive or support is even or < 3
    """
    if not sigma > 0:
        raise InvalidParameterError(f"Kernel sigma must be positive, got {sigma}")
    if support < 3 or support % 2 == 0:
        raise InvalidParameterError(
            f"Kernel support must be an odd integer >= 3, got {support}"
        )

    offsets = np.arange(support) - support // 2
    raw = np.exp(-(offsets.astype(float) ** 2) / (2.0 * sigma**2))
    weights = raw / raw.sum()
    weights.setflags(write=False)
    return GaussianKernel1D(sigma=float(sigma), support=int(support), weights=weights)


def _fourier_basis(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Real orthonormal Fourier basis of length-n periodic signals.

    Returns:
        Tuple (basis, frequencies) where basis columns are the cos/sin vectors and
        frequencies[j] is the integer frequency of column j
    """
    j = np.arange(n)
    columns = [np.full(n, 1.0 / math.sqrt(n))]
    frequencies = [0]
    for k in range(1, (n - 1) // 2 + 1):
        angle = 2.0 * math.pi * j * k / n
        columns.append(math.sqrt(2.0 / n) * np.cos(angle))
        columns.append(math.sqrt(2.0 / n) * np.sin(angle))
        frequencies.extend([k, k])
    if n % 2 == 0:
        columns.append(np.where(j % 2 == 0, 1.0, -1.0) / math.sqrt(n))
        frequencies.append(n // 2)
    return np.stack(columns, axis=1), np.asarray(frequencies)


def circulant_first_row(kernel: GaussianKernel1D, axis_len: int) -> np.ndarray:
    """Wrap the kernel periodically onto a length-axis_len first row."""
    row = np.zeros(axis_len)
    np.add.at(row, kernel.offsets % axis_len, kernel.weights)
    return row


@dataclass(frozen=True)
class BlurOperator:
    """Eigendecomposed 1D circulant blur, applied separably to fields.

    Attributes:
        axis_len: Length n of every spatial axis
        eigvecs_1d: Orthonormal n x n matrix, columns are eigenvectors
        eigvals_1d: Eigenvalues in (0, 1], sorted descending
        kernel: Kernel the operator was built from
        frequencies: Integer Fourier frequency of each eigenvector column
    """

    axis_len: int
    eigvecs_1d: np.ndarray = field(repr=False)
    eigvals_1d: np.ndarray = field(repr=False)
    kernel: GaussianKernel1D
    frequencies: np.ndarray = field(repr=False)

    def eigenvalues(self, ndim: int) -> np.ndarray:
        """Eigenvalues laid out like a field of the given spatial rank."""
        _check_ndim(ndim)
        if ndim == 1:
            return self.eigvals_1d
        return np.outer(self.eigvals_1d, self.eigvals_1d)

    def field_shape(self, ndim: int) -> Tuple[int, ...]:
        _check_ndim(ndim)
        return (self.axis_len,) * ndim

    def matches(self, other: "BlurOperator") -> bool:
        """Same axis length and kernel, so eigenbases and eigenvalues agree."""
        if other is self:
            return True
        return (
            self.axis_len == other.axis_len
            and self.kernel.sigma == other.kernel.sigma
            and self.kernel.support == other.kernel.support
            and np.array_equal(self.kernel.weights, other.kernel.weights)
        )

    def matrix(self, power: float = 1.0) -> np.ndarray:
        """Dense 1D matrix ``U diag(d^power) U^T``."""
        scaled = self.eigvecs_1d * self.eigvals_1d**power
        return scaled @ self.eigvecs_1d.T


def build_blur_operator(kernel: GaussianKernel1D, axis_len: int) -> BlurOperator:
    """Eigendecompose the periodic blur of one spatial axis.

    Eigenpairs come from the real Fourier basis of symmetric circulants and, for
    ``axis_len <= 256``, are cross-checked against a dense symmetric eigensolver
    and against the dense circulant matrix itself.

    Args:
        kernel: Blur kernel
        axis_len: Number of pixels per axis

    Returns:
        Immutable blur operator

    Raises:
        InvalidParameterError: If the kernel is longer than the axis
        InvalidStateError: If the eigenvalues are not positive or the dense
            cross-check disagrees
    """
    if kernel.support > axis_len:
        raise InvalidParameterError(
            f"Kernel support {kernel.support} exceeds axis length {axis_len}"
        )

    basis, frequencies = _fourier_basis(axis_len)
    cosines = np.cos(2.0 * math.pi * np.outer(frequencies, kernel.offsets) / axis_len)
    eigvals = cosines @ kernel.weights

    # Descending eigenvalues; ties (cos/sin pairs) keep frequency order
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = basis[:, order]
    frequencies = frequencies[order]

    if np.any(eigvals <= 0.0):
        raise InvalidParameterError(
            f"Blur eigenvalues must be positive (min {eigvals.min():.3e}); "
            f"sigma={kernel.sigma} support={kernel.support} is not admissible"
        )
    if abs(eigvals[0] - 1.0) > 1e-10:
        raise InvalidStateError(f"DC eigenvalue {eigvals[0]!r} differs from 1")

    if axis_len <= DENSE_CHECK_MAX_N:
        dense = linalg.circulant(circulant_first_row(kernel, axis_len))
        reference = linalg.eigh(dense, eigvals_only=True)[::-1]
        eig_dev = float(np.max(np.abs(reference - eigvals)))
        rec_dev = float(np.max(np.abs(dense - (eigvecs * eigvals) @ eigvecs.T)))
        logger.debug(
            f"Blur operator n={axis_len}: eigenvalue deviation {eig_dev:.2e}, "
            f"reconstruction deviation {rec_dev:.2e}"
        )
        if eig_dev > _CHECK_TOLERANCE or rec_dev > _CHECK_TOLERANCE:
            raise InvalidStateError(
                f"Eigendecomposition cross-check failed (eigenvalues {eig_dev:.2e}, "
                f"reconstruction {rec_dev:.2e})"
            )

    for array in (eigvecs, eigvals, frequencies):
        array.setflags(write=False)
    return BlurOperator(
        axis_len=axis_len,
        eigvecs_1d=eigvecs,
        eigvals_1d=eigvals,
        kernel=kernel,
        frequencies=frequencies,
    )


def make_blur_operator(
    axis_len: int, sigma: float = DEFAULT_SIGMA, support: Optional[int] = None
) -> BlurOperator:
    """Convenience constructor: kernel with default support, then the operator."""
    if axis_len < 3:
        raise InvalidParameterError(f"Axis length must be >= 3, got {axis_len}")
    kernel = build_kernel(sigma, support or default_support(sigma, axis_len))
    return build_blur_operator(kernel, axis_len)


def _check_ndim(ndim: int) -> None:
    if ndim not in (1, 2):
        raise InvalidParameterError(f"Spatial rank must be 1 or 2, got {ndim}")


def _infer_ndim(array: np.ndarray, ndim: Optional[int]) -> int:
    if ndim is None:
        ndim = 1 if array.ndim == 1 else 2
    _check_ndim(ndim)
    return ndim


def _check_shape(op: BlurOperator, array: np.ndarray, ndim: int) -> None:
    expected = op.field_shape(ndim)
    if array.ndim < ndim or tuple(array.shape[-ndim:]) != expected:
        raise InvalidParameterError(
            f"Field shape {tuple(array.shape)} does not end with {expected}"
        )


def to_spectral(
    op: BlurOperator, x: np.ndarray, ndim: Optional[int] = None
) -> np.ndarray:
    """Rotate pixel values into the eigenbasis: ``x_bar = U^T x``.

    Raises:
        InvalidParameterError: On shape mismatch
    """
    x = np.asarray(x, dtype=float)
    ndim = _infer_ndim(x, ndim)
    _check_shape(op, x, ndim)
    u = op.eigvecs_1d
    if ndim == 1:
        return x @ u
    return u.T @ x @ u


def to_pixel(
    op: BlurOperator, x_bar: np.ndarray, ndim: Optional[int] = None
) -> np.ndarray:
    """Rotate eigenbasis coefficients back: ``x = U x_bar``.

    Raises:
        InvalidParameterError: On shape mismatch
    """
    x_bar = np.asarray(x_bar, dtype=float)
    ndim = _infer_ndim(x_bar, ndim)
    _check_shape(op, x_bar, ndim)
    u = op.eigvecs_1d
    if ndim == 1:
        return x_bar @ u.T
    return u @ x_bar @ u.T


def dense_rotation(op: BlurOperator, ndim: int) -> np.ndarray:
    """Matrix ``R`` with ``flatten(x_bar) = R @ flatten(x)`` (row-major fields)."""
    _check_ndim(ndim)
    u_t = op.eigvecs_1d.T
    if ndim == 1:
        return np.array(u_t)
    return np.kron(u_t, u_t)


class SpectralField:
    """A field with paired pixel and rotated-coordinate representations.

    Exactly one representation is authoritative when the field is created; the
    other is computed on first access and cached. Instances are treated as
    immutable.
    """

    def __init__(
        self,
        operator: BlurOperator,
        ndim: int,
        pixel: Optional[np.ndarray] = None,
        spectral: Optional[np.ndarray] = None,
    ):
        if (pixel is None) == (spectral is None):
            raise InvalidParameterError(
                "SpectralField needs exactly one of pixel or spectral values"
            )
        _check_ndim(ndim)
        self.operator = operator
        self.ndim = ndim
        self._pixel = None if pixel is None else np.asarray(pixel, dtype=float)
        self._spectral = None if spectral is None else np.asarray(spectral, dtype=float)
        self._source = "pixel" if pixel is not None else "spectral"
        _check_shape(operator, self._values, ndim)

    @classmethod
    def from_pixel(
        cls, operator: BlurOperator, pixel: np.ndarray, ndim: Optional[int] = None
    ) -> "SpectralField":
        pixel = np.asarray(pixel, dtype=float)
        return cls(operator, _infer_ndim(pixel, ndim), pixel=pixel)

    @classmethod
    def from_spectral(
        cls, operator: BlurOperator, spectral: np.ndarray, ndim: Optional[int] = None
    ) -> "SpectralField":
        spectral = np.asarray(spectral, dtype=float)
        return cls(operator, _infer_ndim(spectral, ndim), spectral=spectral)

    @property
    def pixel(self) -> np.ndarray:
        if self._pixel is None:
            self._pixel = to_pixel(self.operator, self._spectral, self.ndim)
        return self._pixel

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            self._spectral = to_spectral(self.operator, self._pixel, self.ndim)
        return self._spectral

    @property
    def authoritative(self) -> str:
        """Which representation the field was created from."""
        return self._source

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.operator.field_shape(self.ndim)

    @property
    def _values(self) -> np.ndarray:
        return self._pixel if self._pixel is not None else self._spectral

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        values = self._values
        return tuple(values.shape[: values.ndim - self.ndim])

    def with_pixel(self, pixel: np.ndarray) -> "SpectralField":
        return SpectralField(self.operator, self.ndim, pixel=pixel)

    def with_spectral(self, spectral: np.ndarray) -> "SpectralField":
        return SpectralField(self.operator, self.ndim, spectral=spectral)

    def __repr__(self) -> str:
        return (
            f"SpectralField(shape={self.shape}, batch={self.batch_shape}, "
            f"authoritative={self.authoritative})"
        )


def apply_power(op: BlurOperator, x: SpectralField, p: float) -> SpectralField:
    """Apply ``W^p = U diag(d^p) U^T`` separably along every spatial axis.

    Args:
        op: Blur operator
        x: Field to blur
        p: Non-negative power; 0 returns ``x`` unchanged

    Returns:
        Blurred field (pixel representation authoritative)

    Raises:
        InvalidParameterError: On negative power or operator/shape mismatch
    """
    if p < 0:
        raise InvalidParameterError(f"Blur power must be >= 0, got {p}")
    if not op.matches(x.operator):
        raise InvalidParameterError(
            f"Field was built on {x.operator!r}, which does not match {op!r}"
        )
    if p == 0:
        return x

    w_p = op.matrix(p)
    if x.ndim == 1:
        return x.with_pixel(x.pixel @ w_p)
    # W^p is symmetric: blur columns (left) and rows (right)
    return x.with_pixel(w_p @ x.pixel @ w_p)
