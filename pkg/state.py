"""
Run-state management for the kriging command line.

This module owns everything a command needs before it starts computing:
merging command-line flags with an optional ``key = value`` config file and
the command defaults, resolving the worker count, checking that input files
exist, and the resume ledger of the bench command. Keeping this logic in one
place lets the commands stay focused on the numerical pipeline.
"""

from __future__ import annotations

import argparse
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Set

import pandas as pd

from krige.bench import RESULT_COLUMNS, CellKey, CellResult, from_frame, to_frame
from krige.errors import UsageError
from krige.formats import read_bench_results, write_bench_results

logger = logging.getLogger(__name__)

WORKERS_ENV = "KRIGE_WORKERS"

# Options that only steer the run itself and cannot come from a config file.
RESERVED_KEYS = {"command", "config", "verbose", "quiet"}

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    """Fully merged options of one command invocation.

    Attributes:
        command: the subcommand identifier (e.g. ``fit``).
        options: option values keyed by argparse ``dest``.
        workers: worker count for commands that use a pool.
    """

    command: str
    options: Dict[str, Any] = field(default_factory=dict)
    workers: int = 1

    def __getitem__(self, key: str) -> Any:
        try:
            return self.options[key]
        except KeyError:
            raise UsageError(f"option {key!r} is not defined for {self.command}") from None

    def get(self, key: str, default: Any = None) -> Any:
        return self.options.get(key, default)


# -------------------------------------------------
# Config file
# -------------------------------------------------
def load_config_file(path: Path) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keys are normalized to argparse ``dest`` form (dashes become
    underscores, leading dashes dropped).

    Raises:
        UsageError: missing file or a line without ``=``.
    """
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _walk_actions(parser: argparse.ArgumentParser) -> Iterator[argparse.Action]:
    for action in parser._actions:
        yield action
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                yield from _walk_actions(sub)


def explicit_options(parser: argparse.ArgumentParser, argv: Optional[Sequence[str]]) -> Set[str]:
    """Destinations the user actually set on the command line."""
    actions = list(_walk_actions(parser))
    saved = [(action, action.default) for action in actions]
    for action in actions:
        action.default = argparse.SUPPRESS
    try:
        namespace = parser.parse_args(argv)
    finally:
        for action, default in saved:
            action.default = default
    return set(vars(namespace))


def _convert(action: argparse.Action, key: str, text: str) -> Any:
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        word = text.lower()
        if word not in TRUE_WORDS | FALSE_WORDS:
            raise UsageError(f"config key {key!r}: expected a boolean, got {text!r}")
        value = word in TRUE_WORDS
        return value if isinstance(action, argparse._StoreTrueAction) else not value
    convert = action.type or str
    items = text.split() if isinstance(action, argparse._AppendAction) else [text]
    try:
        parsed = [convert(item) for item in items]
    except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"config key {key!r}: {exc}") from None
    if action.choices is not None:
        for value in parsed:
            if value not in action.choices:
                raise UsageError(f"config key {key!r}: {value!r} is not one of {list(action.choices)}")
    return parsed if isinstance(action, argparse._AppendAction) else parsed[0]


def merge_options(
    subparser: argparse.ArgumentParser,
    parsed: argparse.Namespace,
    explicit: Set[str],
    file_values: Mapping[str, str],
) -> Dict[str, Any]:
    """Flags override the config file, which overrides the defaults."""
    actions = {a.dest: a for a in subparser._actions if a.dest not in (argparse.SUPPRESS, "help")}
    options = dict(vars(parsed))
    for key, text in file_values.items():
        if key in RESERVED_KEYS or key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        if key in explicit:
            continue
        options[key] = _convert(actions[key], key, text)
    return options


def resolve_workers(flag_value: Optional[int]) -> int:
    """``--workers``, else ``$KRIGE_WORKERS``, else 1."""
    if flag_value is not None:
        workers = flag_value
        source = "--workers"
    else:
        raw = os.environ.get(WORKERS_ENV)
        if raw is None or not raw.strip():
            return 1
        source = WORKERS_ENV
        try:
            workers = int(raw)
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if workers < 1:
        raise UsageError(f"{source} must be >= 1, got {workers}")
    return workers


def check_input_paths(paths: Iterable[Optional[str]]) -> None:
    """Every named input file must exist before any computation starts."""
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise UsageError(f"input file not found: {path}")


def build_run_config(
    parser: argparse.ArgumentParser,
    subparser: argparse.ArgumentParser,
    parsed: argparse.Namespace,
    argv: Optional[Sequence[str]],
) -> RunConfig:
    explicit = explicit_options(parser, argv)
    config_path = getattr(parsed, "config", None)
    file_values = load_config_file(Path(config_path)) if config_path else {}
    options = merge_options(subparser, parsed, explicit, file_values)
    for key in RESERVED_KEYS:
        options.pop(key, None)
    workers = resolve_workers(options.get("workers"))
    logger.debug("command %s options %s", parsed.command, options)
    return RunConfig(command=parsed.command, options=options, workers=workers)


# -------------------------------------------------
# Bench resume ledger
# -------------------------------------------------
class BenchLedger:
    """Results file that doubles as the record of finished bench rows.

    Rows are appended as replicates finish, so an interrupted run keeps
    everything completed so far; ``finalize`` rewrites the file sorted.
    """

    def __init__(self, path: Path, resume: bool = False) -> None:
        self.path = Path(path)
        self.rows: List[CellResult] = []
        if resume and self.path.exists() and self.path.stat().st_size > 0:
            self.rows = from_frame(read_bench_results(self.path, RESULT_COLUMNS))
            logger.info("resuming: %d rows already in %s", len(self.rows), self.path)
        else:
            write_bench_results(self.path, pd.DataFrame(columns=RESULT_COLUMNS))

    @property
    def completed(self) -> Set[CellKey]:
        return {row.key for row in self.rows}

    def append(self, rows: List[CellResult]) -> None:
        self.rows.extend(rows)
        write_bench_results(self.path, to_frame(rows), append=True)

    def finalize(self) -> List[CellResult]:
        self.rows.sort(key=lambda r: r.key)
        write_bench_results(self.path, to_frame(self.rows))
        return self.rows
