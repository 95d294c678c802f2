"""Synthetic and image-folder datasets with matching closed-form score oracles.

Every dataset exposes a finite training set (:attr:`Dataset.points`), fresh draws
from its distribution (:meth:`Dataset.sample`) and the exact score of its forward
marginals under a schedule (:meth:`Dataset.oracle`).
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Union

import numpy as np

from c2f_diffusion.diffusion.predictors import (
    ClosedFormScoreModel,
    GaussianScoreOracle,
    MixtureScoreOracle,
)
from c2f_diffusion.diffusion.schedule import DiffusionSchedule
from c2f_diffusion.diffusion.spectral import BlurOperator, dense_rotation, to_pixel
from c2f_diffusion.exceptions import InvalidInputError, InvalidParameterError
from c2f_diffusion.utils.images import (
    IMAGE_SUFFIXES,
    read_image,
    resize_bilinear,
    to_unit_range,
)
from c2f_diffusion.utils.logging import get_logger

if TYPE_CHECKING:
    from c2f_diffusion.models.experiment import ExperimentConfig

logger = get_logger(__name__)


class Dataset(ABC):
    """Base class for datasets of fields on one blur operator."""

    def __init__(self, operator: BlurOperator, ndim: int):
        self.operator = operator
        self.ndim = ndim

    @classmethod
    @abstractmethod
    def get_name(cls) -> str:
        pass

    @property
    def field_shape(self):
        return self.operator.field_shape(self.ndim)

    @property
    @abstractmethod
    def points(self) -> np.ndarray:
        """Finite training set of shape (M, *field_shape)."""

    @abstractmethod
    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Fresh draws of shape (count, *field_shape)."""

    @abstractmethod
    def oracle(self, schedule: DiffusionSchedule) -> ClosedFormScoreModel:
        """Exact score of the forward marginals of this distribution."""

    @property
    def centers(self) -> Optional[np.ndarray]:
        """Cluster centers for assignment-rate checks, if the data are clustered."""
        return None

    def _check_schedule(self, schedule: DiffusionSchedule) -> None:
        if schedule.field_shape != self.field_shape:
            raise InvalidParameterError(
                f"Schedule fields {schedule.field_shape} do not match dataset "
                f"fields {self.field_shape}"
            )


class GaussianDataset(Dataset):
    """Zero-mean stationary Gaussian fields.

    The covariance ``U diag(scale^2 (0.25 + 0.75 d)) U^T`` is diagonal in the blur
    eigenbasis, so low frequencies carry more variance than high ones.
    """

    def __init__(
        self,
        operator: BlurOperator,
        ndim: int,
        scale: float = 1.0,
        size: int = 256,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__(operator, ndim)
        if not scale > 0:
            raise InvalidParameterError(
                f"Dataset scale must be positive, got {scale}"
            )
        self.scale = float(scale)
        eigenvalues = operator.eigenvalues(ndim)
        self.spectral_variance = scale**2 * (0.25 + 0.75 * eigenvalues)
        self._points = self.sample(size, rng or np.random.default_rng(0))

    @classmethod
    def get_name(cls) -> str:
        return "gaussian"

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(self.field_shape)

    @property
    def covariance(self) -> np.ndarray:
        """Pixel-space covariance of the flattened fields."""
        rotation = dense_rotation(self.operator, self.ndim)
        return (rotation.T * self.spectral_variance.ravel()) @ rotation

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        z_bar = rng.standard_normal((count,) + self.field_shape)
        z_bar = np.sqrt(self.spectral_variance) * z_bar
        return to_pixel(self.operator, z_bar, self.ndim)

    def oracle(self, schedule: DiffusionSchedule) -> GaussianScoreOracle:
        self._check_schedule(schedule)
        return GaussianScoreOracle(schedule, self.mean, self.covariance)


def two_point_template(operator: BlurOperator, ndim: int) -> np.ndarray:
    """Smooth unit-amplitude field ``(1 + cos(2 pi x / n) ...) / 2`` used as ``a``."""
    n = operator.axis_len
    profile = 0.5 * (1.0 + np.cos(2.0 * np.pi * np.arange(n) / n))
    if ndim == 1:
        return profile
    return np.outer(profile, profile)


class TwoPointDataset(Dataset):
    """Equal-weight two-point distribution ``{+a, -a}``."""

    def __init__(self, operator: BlurOperator, ndim: int, scale: float = 1.0):
        super().__init__(operator, ndim)
        if not scale > 0:
            raise InvalidParameterError(
                f"Dataset scale must be positive, got {scale}"
            )
        self.a = scale * two_point_template(operator, ndim)

    @classmethod
    def get_name(cls) -> str:
        return "two-point"

    @property
    def points(self) -> np.ndarray:
        return np.stack([self.a, -self.a])

    @property
    def centers(self) -> np.ndarray:
        return self.points

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        signs = rng.choice([-1.0, 1.0], size=count)
        return signs.reshape((count,) + (1,) * self.ndim) * self.a

    def oracle(self, schedule: DiffusionSchedule) -> MixtureScoreOracle:
        self._check_schedule(schedule)
        return MixtureScoreOracle(schedule, self.points)


class MixtureDataset(Dataset):
    """K random centers plus isotropic Gaussian noise of std ``noise``."""

    def __init__(
        self,
        operator: BlurOperator,
        ndim: int,
        n_components: int = 2,
        noise: float = 0.1,
        scale: float = 1.0,
        size: int = 256,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__(operator, ndim)
        if n_components < 1:
            raise InvalidParameterError(
                f"Mixture needs at least one component, got {n_components}"
            )
        if noise < 0:
            raise InvalidParameterError(f"Mixture noise must be >= 0, got {noise}")
        rng = rng or np.random.default_rng(0)
        self.noise = float(noise)
        shape = (n_components,) + self.field_shape
        self._centers = scale * rng.standard_normal(shape)
        self._points = self.sample(size, rng)

    @classmethod
    def get_name(cls) -> str:
        return "gmm"

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        labels = rng.integers(0, self._centers.shape[0], size=count)
        noise = self.noise * rng.standard_normal((count,) + self.field_shape)
        return self._centers[labels] + noise

    def oracle(self, schedule: DiffusionSchedule) -> MixtureScoreOracle:
        self._check_schedule(schedule)
        return MixtureScoreOracle(
            schedule, self._centers, component_var=self.noise**2
        )


@dataclass(eq=False)
class ImageDataset(Dataset):
    """Grayscale images scaled to [-1, 1], all of one square shape.

    Attributes:
        items: Array (M, size, size)
        sources: File each item was read from
    """

    items: np.ndarray
    sources: List[Path] = field(default_factory=list)
    operator: Optional[BlurOperator] = None

    def __post_init__(self) -> None:
        self.items = np.asarray(self.items, dtype=float)
        if self.items.ndim != 3 or self.items.shape[0] == 0:
            raise InvalidInputError(
                f"Image dataset needs a non-empty stack of 2D images, "
                f"got {self.items.shape}"
            )
        if np.any(np.abs(self.items) > 1.0 + 1e-12):
            raise InvalidInputError("Image pixel values must lie in [-1, 1]")
        self.ndim = 2

    @classmethod
    def get_name(cls) -> str:
        return "images"

    @property
    def field_shape(self):
        return tuple(self.items.shape[1:])

    @property
    def points(self) -> np.ndarray:
        return self.items

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return self.items[rng.integers(0, self.items.shape[0], size=count)]

    def oracle(self, schedule: DiffusionSchedule) -> MixtureScoreOracle:
        self._check_schedule(schedule)
        return MixtureScoreOracle(schedule, self.items)


def load_image_folder(path: Union[str, Path], target_size: int) -> ImageDataset:
    """Load every PGM/PNG image of a folder, resized to ``target_size`` squared.

    Images are resized bilinearly without cropping and mapped from
    ``[0, maxval]`` to ``[-1, 1]``. Unreadable files are skipped with a warning.

    Raises:
        InvalidInputError: If the folder is missing or yields no image
    """
    folder = Path(path)
    if not folder.is_dir():
        raise InvalidInputError(f"Image folder not found: {folder}")
    if target_size < 3:
        raise InvalidParameterError(f"target_size must be >= 3, got {target_size}")

    items, sources = [], []
    for file_path in sorted(folder.iterdir()):
        if file_path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            pixels, maxval = read_image(file_path)
        except (InvalidInputError, OSError) as e:
            logger.warning(f"Skipping unreadable image {file_path}: {e}")
            continue
        unit = to_unit_range(resize_bilinear(pixels, target_size), maxval)
        items.append(np.clip(unit, -1.0, 1.0))
        sources.append(file_path)

    if not items:
        raise InvalidInputError(f"No readable PGM or PNG image in {folder}")
    logger.info(f"Loaded {len(items)} images from {folder} at {target_size}px")
    return ImageDataset(items=np.stack(items), sources=sources)


DATASETS = [GaussianDataset, TwoPointDataset, MixtureDataset, ImageDataset]


def get_available_datasets() -> List[str]:
    return [dataset_cls.get_name() for dataset_cls in DATASETS]


def build_dataset(
    config: "ExperimentConfig",
    operator: BlurOperator,
    rng: Optional[np.random.Generator] = None,
) -> Dataset:
    """Build the dataset the configuration names.

    Raises:
        InvalidParameterError: On an unknown dataset name or a rank mismatch
        InvalidInputError: If an image folder yields no usable image
    """
    rng = rng or np.random.default_rng(config.seed)
    ndim = config.field_ndim
    if config.dataset == GaussianDataset.get_name():
        return GaussianDataset(
            operator, ndim, config.dataset_scale, config.dataset_size, rng
        )
    if config.dataset == TwoPointDataset.get_name():
        return TwoPointDataset(operator, ndim, config.dataset_scale)
    if config.dataset == MixtureDataset.get_name():
        return MixtureDataset(
            operator,
            ndim,
            n_components=config.dataset_components,
            noise=config.dataset_noise,
            scale=config.dataset_scale,
            size=config.dataset_size,
            rng=rng,
        )
    if config.dataset == ImageDataset.get_name():
        if ndim != 2:
            raise InvalidParameterError("Image datasets need field_ndim = 2")
        if not config.image_dir:
            raise InvalidParameterError("dataset = images needs image_dir")
        dataset = load_image_folder(config.image_dir, config.field_size)
        dataset.operator = operator
        return dataset
    raise InvalidParameterError(
        f"Unknown dataset '{config.dataset}'; available: {get_available_datasets()}"
    )
