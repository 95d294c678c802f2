"""Module for JSON schema definitions."""

from c2f_diffusion.schemas.json_schemas import (
    CHECKPOINT_FORMAT_VERSION,
    CHECKPOINT_SCHEMA,
    CONFIG_SCHEMA,
)

__all__ = [
    "CHECKPOINT_FORMAT_VERSION",
    "CHECKPOINT_SCHEMA",
    "CONFIG_SCHEMA",
]
