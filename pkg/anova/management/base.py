"""Shared plumbing for the analysis management commands."""

import argparse
from contextlib import contextmanager

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from anova.stats.config import config, validate_config
from anova.stats.exceptions import FactorLabError, InputError, NumericalError


def float_list(text: str):
    """Comma-separated floats for grid flags."""
    try:
        return tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def name_list(text: str):
    return tuple(item.strip() for item in text.split(",") if item.strip())


class AnalysisCommand(BaseCommand):
    """Adds --out/--seed/--threads and maps library errors onto exit codes."""

    def add_common_arguments(self, parser):
        parser.add_argument(
            "--out",
            default=None,
            help="Output directory (default: $FACTORLAB_OUTPUT_DIR/<command>)",
        )
        parser.add_argument(
            "--seed",
            type=int,
            default=config.SEED,
            help="Unsigned 64-bit seed for every random stream",
        )
        parser.add_argument(
            "--threads",
            type=int,
            default=config.N_JOBS,
            help="Worker threads for permutation and replicate loops (0 = all cores)",
        )

    def output_dir(self, options, name: str):
        return options["out"] or settings.FACTORLAB_OUTPUT_DIR / name

    def check_environment(self):
        is_valid, errors = validate_config()
        if not is_valid:
            raise CommandError("; ".join(errors), returncode=2)

    @contextmanager
    def exit_codes(self):
        """InputError exits 2, NumericalError exits 3, anything else from the library 1."""
        try:
            yield
        except InputError as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=2) from exc
        except NumericalError as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=3) from exc
        except FactorLabError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
