"""Experiment configuration model.

An experiment is described by a flat ``key = value`` text file. ``#`` starts a
comment at the start of a line or after whitespace, so values such as paths may
contain ``#``. Values are validated against ``CONFIG_SCHEMA``; unknown keys are
rejected. Writing, parsing and writing again gives identical bytes.
"""

import dataclasses
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

from c2f_diffusion.diffusion.schedule import DiffusionSchedule, make_schedule
from c2f_diffusion.diffusion.spectral import BlurOperator, make_blur_operator
from c2f_diffusion.diffusion.training import OptimizerConfig
from c2f_diffusion.exceptions import InvalidInputError, InvalidParameterError
from c2f_diffusion.utils.file_handler import FileHandler
from c2f_diffusion.utils.logging import get_logger

logger = get_logger(__name__)

CONFIG_HEADER = "# c2f experiment configuration"

# Config files with these suffixes hold a YAML or JSON mapping
MAPPING_SUFFIXES = (".yaml", ".yml", ".json")

# "#" starts a comment at the start of a line or after whitespace
_COMMENT = re.compile(r"(?:^|\s)#.*$")

# Keys that define the schedule and field geometry, embedded in checkpoints
FINGERPRINT_KEYS = (
    "n_steps",
    "beta_start",
    "beta_end",
    "sigma",
    "kernel_support",
    "f_type",
    "f_end",
    "fine_to_coarse",
    "unit_score_exponent",
    "field_size",
    "field_ndim",
)


@dataclass
class ExperimentConfig:
    """All settings of one experiment; defaults follow the desk-scale setup."""

    # Diffusion schedule and blur operator
    n_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma: float = 0.4
    kernel_support: int = 0
    f_type: str = "quartic"
    f_end: float = 0.14
    fine_to_coarse: bool = False
    unit_score_exponent: bool = False
    # Sampler
    shifted_indexing: bool = False
    final_step_noise: str = "no-noise-at-last-step"
    # Fields and data
    field_size: int = 8
    field_ndim: int = 2
    dataset: str = "gaussian"
    dataset_size: int = 256
    dataset_scale: float = 1.0
    dataset_components: int = 2
    dataset_noise: float = 0.1
    image_dir: str = ""
    # Model and training
    model: str = "oracle"
    samples_per_step: int = 256
    mlp_hidden: int = 64
    mlp_embed: int = 16
    train_steps: int = 2000
    learning_rate: float = 0.001
    batch_size: int = 128
    # Outputs
    n_samples: int = 64
    n_reference: int = 1024
    n_bands: int = 4
    stride: int = 100
    clamp_output: bool = True
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        for name, kind in self.field_types().items():
            value = getattr(self, name)
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                setattr(self, name, float(value))
        self.validate()

    def validate(self) -> None:
        """Validate against the JSON schema and cross-field constraints.

        Raises:
            InvalidParameterError: If any value is out of range
        """
        error = FileHandler.validation_error(self.to_dict(), "config")
        if error is not None:
            raise InvalidParameterError(f"Invalid experiment config: {error}")
        if self.beta_start > self.beta_end:
            raise InvalidParameterError(
                f"beta_start {self.beta_start} exceeds beta_end {self.beta_end}"
            )
        if self.kernel_support and (
            self.kernel_support < 3 or self.kernel_support % 2 == 0
        ):
            raise InvalidParameterError(
                f"kernel_support must be 0 (auto) or an odd integer >= 3, "
                f"got {self.kernel_support}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def field_types(cls) -> Dict[str, type]:
        return {f.name: f.type for f in dataclasses.fields(cls)}  # type: ignore

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "ExperimentConfig":
        """Create a config from typed values; missing keys keep their defaults.

        Raises:
            InvalidParameterError: On unknown keys or invalid values
        """
        unknown = sorted(set(values) - set(cls.field_types()))
        if unknown:
            raise InvalidParameterError(f"Unknown config keys: {', '.join(unknown)}")
        return cls(**dict(values))

    def with_overrides(self, overrides: Mapping[str, Any]) -> "ExperimentConfig":
        """Copy with some values replaced; strings are parsed per the key's type."""
        values = self.to_dict()
        for key, value in overrides.items():
            values[key] = parse_value(key, value) if isinstance(value, str) else value
        return self.from_dict(values)

    # Text format

    def dumps(self) -> str:
        lines = [CONFIG_HEADER]
        for key, value in self.to_dict().items():
            lines.append(f"{key} = {format_value(value)}".rstrip())
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        """Parse ``key = value`` lines.

        Raises:
            InvalidInputError: On malformed or duplicate lines
            InvalidParameterError: On unknown keys or invalid values
        """
        return cls.from_dict(dict(_parse_lines(text.splitlines())))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Load a ``key = value`` file, or a YAML or JSON mapping of the same keys.

        Raises:
            FileNotFoundError: If the file does not exist
            InvalidInputError: On malformed lines or a mapping failing the schema
            InvalidParameterError: On invalid values
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        if path.suffix.lower() in MAPPING_SUFFIXES:
            config = cls.from_dict(FileHandler.load_and_validate(path, "config"))
        else:
            config = cls.loads(path.read_text(encoding="utf-8"))
        logger.debug(f"Loaded experiment config from {path}")
        return config

    def save(self, path: Union[str, Path]) -> Path:
        return FileHandler.write_text_atomic(self.dumps(), path)

    # Derived objects

    def fingerprint(self) -> Dict[str, Any]:
        """Schedule-defining subset of the config, embedded in checkpoints."""
        values = self.to_dict()
        return {key: values[key] for key in FINGERPRINT_KEYS}

    def build_operator(self) -> BlurOperator:
        return make_blur_operator(
            self.field_size, self.sigma, self.kernel_support or None
        )

    def build_schedule(
        self, operator: Optional[BlurOperator] = None
    ) -> DiffusionSchedule:
        return make_schedule(
            operator or self.build_operator(),
            ndim=self.field_ndim,
            n_steps=self.n_steps,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            f_type=self.f_type,
            f_end=self.f_end,
            fine_to_coarse=self.fine_to_coarse,
            unit_score_exponent=self.unit_score_exponent,
        )

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size
        )

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(key: str, text: str) -> Any:
    """Parse ``text`` into the type of config key ``key``.

    Raises:
        InvalidParameterError: On unknown keys or unparsable values
    """
    types = ExperimentConfig.field_types()
    if key not in types:
        raise InvalidParameterError(f"Unknown config key '{key}'")
    kind = types[key]
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(f"expected true or false, got '{text}'")
            return text.lower() == "true"
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError as e:
        raise InvalidParameterError(f"Invalid value for '{key}': {e}") from e
    return text


def parse_assignment(text: str) -> Tuple[str, str]:
    """Split ``key=value`` (used by ``--set``).

    Raises:
        InvalidInputError: If there is no ``=``
    """
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise InvalidInputError(f"Expected key=value, got '{text}'")
    return key.strip(), value.strip()


def _parse_lines(lines: Iterable[str]) -> Iterable[Tuple[str, Any]]:
    seen = set()
    for number, raw in enumerate(lines, start=1):
        line = _COMMENT.sub("", raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"Line {number}: expected 'key = value': {raw!r}")
        key, value = parse_assignment(line)
        if key in seen:
            raise InvalidInputError(f"Line {number}: duplicate key '{key}'")
        seen.add(key)
        yield key, parse_value(key, value)
