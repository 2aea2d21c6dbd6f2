"""
Register all subcommands in a central list.

This module imports each concrete ``BaseCommand`` subclass and constructs
an ordered list called ``COMMANDS``. ``app.py`` builds one subparser per
entry, in this order, and looks the active command up with
``get_command_by_id``.
"""

from __future__ import annotations

from typing import List, Optional

from .base import BaseCommand
from .bench import BenchCommand
from .detrend import DetrendCommand
from .fit import FitCommand
from .predict import PredictCommand
from .select import SelectCommand
from .simulate import SimulateCommand
from .study_k import StudyKCommand

# Order of appearance in --help.
COMMANDS: List[BaseCommand] = [
    SimulateCommand(),
    FitCommand(),
    PredictCommand(),
    DetrendCommand(),
    SelectCommand(),
    BenchCommand(),
    StudyKCommand(),
]


def get_command_by_id(command_id: str) -> Optional[BaseCommand]:
    """Return the command with the matching identifier, or ``None``."""
    for command in COMMANDS:
        if command.id == command_id:
            return command
    return None
