"""Utility modules for c2f-diffusion."""

from c2f_diffusion.utils.file_handler import FileHandler
from c2f_diffusion.utils.logging import configure_logging, get_logger
from c2f_diffusion.utils.telemetry import (
    active_commands,
    command_counter,
    command_duration,
    command_metrics,
    configure_telemetry_from_env,
    get_tracer,
    init_telemetry,
    reverse_steps,
    traced,
    training_steps,
)

__all__ = [
    "FileHandler",
    "get_logger",
    "configure_logging",
    "init_telemetry",
    "get_tracer",
    "traced",
    "command_metrics",
    "configure_telemetry_from_env",
    "command_counter",
    "command_duration",
    "active_commands",
    "reverse_steps",
    "training_steps",
]
