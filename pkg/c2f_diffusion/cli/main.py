"""Command-line entry point: ``c2f <command> [options]``."""

import argparse
import sys
from typing import Callable, Dict, List, Optional

from c2f_diffusion.cli import commands
from c2f_diffusion.datasets import get_available_datasets
from c2f_diffusion.exceptions import C2FError
from c2f_diffusion.models.experiment import ExperimentConfig, parse_assignment
from c2f_diffusion.utils.logging import LOG_LEVELS, configure_logging, get_logger
from c2f_diffusion.utils.telemetry import configure_telemetry_from_env

logger = get_logger(__name__)


def _add_common_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", help="Experiment config file (key = value, or a YAML/JSON mapping)"
    )
    parser.add_argument("--seed", type=int, help="Random seed (overrides config)")
    parser.add_argument("--out", help="Output directory (overrides config)")
    parser.add_argument(
        "--set",
        help="Override one config key, e.g. --set f_end=0.6 (repeatable)",
        action="append",
        dest="overrides",
        default=[],
        metavar="KEY=VALUE",
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subparser per command."""
    parser = argparse.ArgumentParser(
        prog="c2f",
        description="Blur diffusion: schedules, forward and reverse "
        "trajectories, training and evaluation",
    )
    parser.add_argument(
        "--log-level",
        help="Log level (default: C2F_LOG_LEVEL or info)",
        choices=sorted(LOG_LEVELS),
        default=None,
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    schedule = subparsers.add_parser(
        "schedule", help="Write the noise/blur schedule and Abar quantile curves"
    )
    _add_common_options(schedule)

    forward = subparsers.add_parser(
        "forward", help="Render a forward (blurring) trajectory"
    )
    _add_common_options(forward)
    forward.add_argument(
        "--image",
        help="PGM or PNG image matching the configured field "
        "(default: first dataset item)",
    )

    train = subparsers.add_parser(
        "train",
        help="Fit a linear or MLP score model on the configured dataset",
    )
    _add_common_options(train)
    train.add_argument("--checkpoint", help="Resume an MLP from this checkpoint")

    sample = subparsers.add_parser("sample", help="Run the reverse deblurring sampler")
    _add_common_options(sample)
    sample.add_argument(
        "--checkpoint", help="Checkpoint of a trained model (not needed for oracle)"
    )

    evaluate = subparsers.add_parser(
        "eval",
        help="Compare samples with references "
        f"(datasets: {', '.join(get_available_datasets())})",
    )
    _add_common_options(evaluate)
    evaluate.add_argument(
        "--samples", help="Samples .npy file (default: OUT/samples.npy)"
    )
    evaluate.add_argument(
        "--reference", help="Reference .npy file (default: fresh dataset draws)"
    )
    evaluate.add_argument("--max-frechet", type=float, help="Frechet threshold")
    evaluate.add_argument(
        "--max-cov-error", type=float, help="Relative covariance error threshold"
    )
    evaluate.add_argument(
        "--max-mean-error", type=float, help="Max-abs mean error threshold"
    )

    check = subparsers.add_parser(
        "check", help="Verify the structural properties of the configured schedule"
    )
    _add_common_options(check)
    check.add_argument(
        "--tolerance", type=float, default=1e-9, help="Deviation tolerance"
    )

    ablate = subparsers.add_parser(
        "ablate", help="Compare blur schedule variants with the dataset oracle"
    )
    _add_common_options(ablate)

    return parser


def parse_args(args: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments.

    Args:
        args: Command line arguments (None uses sys.argv)

    Returns:
        Parsed arguments
    """
    return build_parser().parse_args(args)


def resolve_config(parsed_args: argparse.Namespace) -> ExperimentConfig:
    """Apply the config file, then ``--set`` overrides, then ``--seed`` and ``--out``.

    Raises:
        InvalidInputError: On malformed ``--set`` values or config lines
        InvalidParameterError: On unknown keys or invalid values
    """
    if parsed_args.config:
        config = ExperimentConfig.from_file(parsed_args.config)
    else:
        config = ExperimentConfig()

    overrides: Dict[str, object] = dict(
        parse_assignment(item) for item in parsed_args.overrides
    )
    if parsed_args.seed is not None:
        overrides["seed"] = parsed_args.seed
    if parsed_args.out is not None:
        overrides["output_dir"] = parsed_args.out
    if overrides:
        config = config.with_overrides(overrides)
    return config


def _dispatch(parsed_args: argparse.Namespace, config: ExperimentConfig) -> int:
    handlers: Dict[str, Callable[[], int]] = {
        "schedule": lambda: commands.cmd_schedule(config),
        "forward": lambda: commands.cmd_forward(config, parsed_args.image),
        "train": lambda: commands.cmd_train(config, parsed_args.checkpoint),
        "sample": lambda: commands.cmd_sample(config, parsed_args.checkpoint),
        "eval": lambda: commands.cmd_eval(
            config,
            samples_path=parsed_args.samples,
            reference_path=parsed_args.reference,
            max_frechet=parsed_args.max_frechet,
            max_cov_error=parsed_args.max_cov_error,
            max_mean_error=parsed_args.max_mean_error,
        ),
        "check": lambda: commands.cmd_check(config, parsed_args.tolerance),
        "ablate": lambda: commands.cmd_ablate(config),
    }
    return handlers[parsed_args.command]()


def main(args: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI.

    Args:
        args: Command line arguments (None uses sys.argv)

    Returns:
        Exit code: 0 on success, 1 on errors, 2 when a threshold check fails
    """
    parsed_args = parse_args(args)
    configure_logging(parsed_args.log_level)
    configure_telemetry_from_env()

    try:
        config = resolve_config(parsed_args)
        logger.info(f"Running c2f {parsed_args.command} into {config.output_dir}")
        exit_code = _dispatch(parsed_args, config)
    except (C2FError, OSError) as e:
        logger.error(f"Error: {str(e)}")
        return commands.EXIT_ERROR

    logger.info(f"c2f {parsed_args.command} finished with exit code {exit_code}")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
