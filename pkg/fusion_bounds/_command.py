import argparse
from abc import ABC, abstractmethod
from typing import Any, Dict

from .config import RunConfig
from .utils import (
    EstimationError,
    FusionError,
    InputValidationError,
    UsageError,
    logger,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_ESTIMATION = 3


def exit_code_for(error: FusionError) -> int:
    if isinstance(error, InputValidationError):
        return EXIT_INPUT
    if isinstance(error, EstimationError):
        return EXIT_ESTIMATION
    if isinstance(error, UsageError):
        return EXIT_USAGE
    return EXIT_ESTIMATION


class FusionCommand(ABC):
    """Abstract base class for the command-line subcommands."""

    name: str
    help: str

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        pass

    def flags(self, args: argparse.Namespace) -> Dict[str, Any]:
        """Command-specific flags as RunConfig keys; None means not given."""
        return {}

    def run(self, args: argparse.Namespace, common: Dict[str, Any]) -> int:
        try:
            config = RunConfig.from_sources({**common, **self.flags(args)})
            return self.run_with_config(config)
        except FusionError as error:
            code = exit_code_for(error)
            logger.error(
                "%s: %s (%s, exit %d)", self.name, error, type(error).__name__, code
            )
            return code

    @abstractmethod
    def run_with_config(self, config: RunConfig) -> int: ...
