import argparse
from typing import Any, Dict

from ._command import EXIT_ESTIMATION, EXIT_OK, FusionCommand
from .config import RunConfig
from .oracle import run_oracle_suite
from .report import build_report, write_report
from .utils import logger


class OracleCheckCommand(FusionCommand):
    """Sandwich and tightness checks of the bounds on seeded discrete instances."""

    name = "oracle-check"
    help = "check the bounds against exact discrete optimal couplings"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument(
            "--instances", type=int, help="random instances (default: 200)"
        )
        parser.add_argument(
            "--location-scale",
            type=int,
            dest="location_scale",
            help="tight instances (default: 50)",
        )

    def flags(self, args: argparse.Namespace) -> Dict[str, Any]:
        return {"instances": args.instances, "location_scale": args.location_scale}

    def run_with_config(self, config: RunConfig) -> int:
        report = run_oracle_suite(config.instances, config.location_scale, config.seed)
        kept = ("instances", "location_scale", "seed")
        echo = {key: value for key, value in config.echo().items() if key in kept}
        seeds = {"seed": config.seed}
        write_report(build_report(self.name, echo, seeds, report.to_dict()), config.out)
        if not report.ok:
            logger.error("oracle check failed on %d instances", len(report.failures))
            return EXIT_ESTIMATION
        return EXIT_OK
