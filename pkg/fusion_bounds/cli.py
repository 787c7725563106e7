import argparse
import logging
import sys
from typing import List, NoReturn, Optional, Sequence

from ._command import EXIT_USAGE, FusionCommand
from .cmd_analyze import AnalyzeCommand
from .cmd_oracle import OracleCheckCommand
from .cmd_simulate import SimulateCommand
from .flags import Flags
from .report import tool_version
from .utils import logger

COMMANDS: List[FusionCommand] = [
    AnalyzeCommand(),
    SimulateCommand(),
    OracleCheckCommand(),
]


class _Parser(argparse.ArgumentParser):
    """Bad usage exits with status 1; argparse's 2 is reserved for input errors here."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", metavar="FILE.toml", help="TOML file with defaults for any flag"
    )
    parser.add_argument("--seed", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument(
        "--threads", type=int, help="worker threads (env: FUSION_BOUNDS_THREADS)"
    )
    parser.add_argument("--out", help="report path (default: stdout)")
    parser.add_argument("-v", "--verbose", action="store_true", default=False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fusion-bounds", description="Cauchy-Schwarz bounds for data fusion"
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {tool_version()}"
    )
    subparsers = parser.add_subparsers(
        dest="command", required=True, parser_class=_Parser
    )
    for command in COMMANDS:
        sub = subparsers.add_parser(
            command.name, help=command.help, description=command.__doc__
        )
        _add_common(sub)
        command.add_arguments(sub)
        sub.set_defaults(handler=command)
    return parser


def configure_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(logging.DEBUG if verbose or Flags.verbose() else logging.INFO)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    common = {
        "config": args.config,
        "seed": args.seed,
        "alpha": args.alpha,
        "threads": args.threads,
        "out": args.out,
    }
    command: FusionCommand = args.handler
    return command.run(args, common)


if __name__ == "__main__":
    sys.exit(main())
