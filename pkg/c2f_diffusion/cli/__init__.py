"""Command-line interface of c2f-diffusion."""

from c2f_diffusion.cli.main import main, parse_args

__all__ = ["main", "parse_args"]
