"""
Main entrypoint for the reduced-basis kriging command line.

This script wires together the run state, the console helpers and the
individual subcommands. It builds one subparser per entry of
``commands.COMMANDS``, merges flags with the optional config file into a
``RunConfig`` and hands it to the selected command.

New subcommands are added by creating a module in ``commands/`` that
defines a subclass of ``BaseCommand`` and registering it in
``commands/__init__.py``.

Available commands:

* simulate (Matérn truth field and observations)
* fit (reduced-basis ML, EM with full K, EM with scaled identity K)
* predict (kriging predictions and standard errors)
* detrend (spline covariate projection of station data)
* select (knot layout selection, optionally on detrended stations)
* bench (accuracy-versus-time experiment)
* study-k (correlation profile of the empirical K)

Errors raised by the library are caught here, logged as one line and turned
into the process exit status carried by the exception.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Dict, Optional, Sequence, Tuple

from krige.errors import KrigeError, UsageError

from commands import COMMANDS, get_command_by_id
from state import build_run_config

logger = logging.getLogger("krige")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Parser(argparse.ArgumentParser):
    """Argument errors become ``UsageError`` so they share the exit path."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    """The top-level parser and the subparser of each command id."""
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    common.add_argument("--config", default=None, help="key = value file with option defaults")

    parser = _Parser(prog="krige", description="Reduced-basis spatial kriging.")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    subparsers.required = True
    subs: Dict[str, argparse.ArgumentParser] = {}
    for command in COMMANDS:
        sub = subs[command.id] = subparsers.add_parser(
            command.id, parents=[common], help=command.description, description=command.description
        )
        command.add_arguments(sub)
    return parser, subs


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, subparsers = build_parser()
        parsed = parser.parse_args(argv)
        configure_logging(parsed.verbose, parsed.quiet)
        command = get_command_by_id(parsed.command)
        if command is None:
            raise UsageError(f"unknown command {parsed.command!r}")
        config = build_run_config(parser, subparsers[parsed.command], parsed, argv)
        return command.execute(config)
    except KrigeError as exc:
        if not logging.getLogger().handlers:
            configure_logging(False, False)
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
