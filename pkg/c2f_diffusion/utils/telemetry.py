"""Telemetry utilities for c2f-diffusion.

This module provides OpenTelemetry tracing and Prometheus metrics for the
command surface and the long-running loops (training and reverse sampling).
Tracing is off by default so that command output stays limited to artifacts.
"""

import os
from functools import wraps
from typing import Any, Callable, Dict, Optional, TypeVar

from opentelemetry import trace
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter
from opentelemetry.trace import StatusCode
from prometheus_client import Counter, Gauge, Histogram, start_http_server

from c2f_diffusion.utils.file_handler import FileHandler
from c2f_diffusion.utils.logging import get_logger

logger = get_logger(__name__)

_tracer_provider: Optional[TracerProvider] = None
_tracer: Optional[trace.Tracer] = None

TELEMETRY_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "service_name": {"type": "string"},
        "exporter": {"type": "string", "enum": ["console", "otlp", "none"]},
        "exporter_endpoint": {"type": "string"},
        "metrics_port": {"type": "integer"},
        "attributes": {"type": "object", "additionalProperties": {"type": "string"}},
    },
    "required": ["service_name", "exporter"],
}
FileHandler.register_schema("telemetry", TELEMETRY_CONFIG_SCHEMA)

command_counter = Counter(
    "c2f_commands_total",
    "Total number of CLI commands executed",
    ["command", "status"],
)

command_duration = Histogram(
    "c2f_command_duration_seconds",
    "Wall time spent in CLI commands",
    ["command"],
    buckets=[0.1, 0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 300.0],
)

active_commands = Gauge(
    "c2f_active_commands", "Number of CLI commands currently running"
)

reverse_steps = Counter(
    "c2f_reverse_steps_total", "Reverse sampler steps executed (all chains batched)"
)

training_steps = Counter(
    "c2f_training_steps_total", "Optimizer or per-timestep fitting steps executed"
)


def init_telemetry(
    service_name: str = "c2f-diffusion",
    exporter: str = "none",
    exporter_endpoint: Optional[str] = None,
    metrics_port: Optional[int] = None,
    attributes: Optional[Dict[str, str]] = None,
) -> None:
    """Initialize OpenTelemetry and Prometheus metrics.

    Args:
        service_name: Name of the service for telemetry reporting
        exporter: Type of exporter to use ('console', 'otlp', or 'none')
        exporter_endpoint: Endpoint for OTLP exporter
        metrics_port: Port to expose Prometheus metrics on
        attributes: Additional resource attributes
    """
    global _tracer_provider, _tracer

    exporter = exporter.lower()
    settings: Dict[str, Any] = {"service_name": service_name, "exporter": exporter}
    if exporter_endpoint:
        settings["exporter_endpoint"] = exporter_endpoint
    if metrics_port:
        settings["metrics_port"] = metrics_port
    if attributes:
        settings["attributes"] = attributes
    error = FileHandler.validation_error(settings, "telemetry")
    if error is not None:
        logger.warning(f"Invalid telemetry settings, tracing disabled: {error}")
        exporter = "none"

    resource_attributes = {
        "service.name": service_name,
        "service.namespace": "c2f_diffusion",
        "service.version": os.environ.get("SERVICE_VERSION", "dev"),
    }
    if attributes:
        resource_attributes.update(attributes)

    _tracer_provider = TracerProvider(resource=Resource.create(resource_attributes))

    if exporter == "console":
        _tracer_provider.add_span_processor(BatchSpanProcessor(ConsoleSpanExporter()))
        logger.debug("Configured OpenTelemetry with console exporter")
    elif exporter == "otlp":
        # Imported lazily: the gRPC exporter pulls in a heavy dependency tree
        from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import (
            OTLPSpanExporter,
        )

        endpoint = exporter_endpoint or os.environ.get(
            "OTEL_EXPORTER_OTLP_ENDPOINT", "http://localhost:4317"
        )
        _tracer_provider.add_span_processor(
            BatchSpanProcessor(OTLPSpanExporter(endpoint=endpoint))
        )
        logger.info(f"Configured OpenTelemetry with OTLP exporter at {endpoint}")

    _tracer = _tracer_provider.get_tracer(__name__)

    if metrics_port:
        try:
            start_http_server(metrics_port)
            logger.info(f"Started Prometheus metrics server on port {metrics_port}")
        except OSError as e:
            logger.error(f"Failed to start Prometheus metrics server: {str(e)}")


def configure_telemetry_from_env() -> None:
    """Configure telemetry from C2F_* and OTEL_* environment variables."""
    metrics_port_str = os.environ.get("C2F_METRICS_PORT")
    init_telemetry(
        service_name=os.environ.get("OTEL_SERVICE_NAME", "c2f-diffusion"),
        exporter=os.environ.get("C2F_OTEL_EXPORTER", "none"),
        exporter_endpoint=os.environ.get("OTEL_EXPORTER_OTLP_ENDPOINT"),
        metrics_port=int(metrics_port_str) if metrics_port_str else None,
    )


def get_tracer() -> trace.Tracer:
    """Get the configured tracer for creating spans.

    Returns:
        OpenTelemetry tracer
    """
    if _tracer is None:
        configure_telemetry_from_env()

    if _tracer is None:
        logger.warning("Telemetry not initialized properly, using no-op tracer")
        return trace.get_tracer("c2f_diffusion_noop")

    return _tracer


T = TypeVar("T")


def traced(
    span_name: Optional[str] = None, attributes: Optional[Dict[str, str]] = None
) -> Callable[[Callable[..., T]], Callable[..., T]]:
    """Decorator to add OpenTelemetry tracing to a function.

    Args:
        span_name: Name for the span (defaults to function name)
        attributes: Additional span attributes

    Returns:
        Decorated function
    """

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> T:
            tracer = get_tracer()
            name = span_name or func.__name__

            with tracer.start_as_current_span(name) as span:
                span.set_attribute("function.name", func.__name__)
                span.set_attribute("function.module", func.__module__)
                if attributes:
                    for key, value in attributes.items():
                        span.set_attribute(key, value)

                try:
                    result = func(*args, **kwargs)
                    span.set_status(StatusCode.OK)
                    return result
                except Exception as e:
                    span.set_status(StatusCode.ERROR, str(e))
                    span.record_exception(e)
                    raise

        return wrapper

    return decorator


def command_metrics(command: str) -> Callable[[Callable[..., int]], Callable[..., int]]:
    """Decorator recording duration, status and concurrency of a CLI command.

    The wrapped function returns an exit code; zero counts as success.

    Args:
        command: Command name used as the metric label

    Returns:
        Decorated function
    """

    def decorator(func: Callable[..., int]) -> Callable[..., int]:
        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> int:
            active_commands.inc()
            status = "error"
            try:
                with command_duration.labels(command=command).time():
                    exit_code = func(*args, **kwargs)
                status = "success" if exit_code == 0 else "failure"
                return exit_code
            finally:
                command_counter.labels(command=command, status=status).inc()
                active_commands.dec()

        return wrapper

    return decorator
