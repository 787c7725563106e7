import argparse
from typing import Any, Dict

from ._command import EXIT_OK, FusionCommand
from .composition import difference_variance_bounds, ols_coefficient_bounds
from .config import RunConfig, parse_lambda_grid, parse_params
from .dataset import ingest_csv
from .estimator import IntervalResult, infer
from .flags import Flags
from .report import build_report, write_report
from .utils import UsageError, logger


class AnalyzeCommand(FusionCommand):
    """Cross-fitted bound estimates and confidence interval for a CSV dataset."""

    name = "analyze"
    help = "estimate Cauchy-Schwarz bounds and their confidence interval on a dataset"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", help="CSV file with columns x1..xp, r, y, z")
        parser.add_argument(
            "--target", choices=("bounds", "ols", "difference-variance")
        )
        parser.add_argument(
            "--estimand", help="registered estimand name (default: product)"
        )
        parser.add_argument(
            "--estimand-param",
            action="append",
            metavar="KEY=VALUE",
            dest="estimand_param",
        )
        parser.add_argument("--k-folds", type=int, dest="k_folds")
        parser.add_argument("--clip-propensity", type=float, dest="clip_propensity")
        parser.add_argument(
            "--known-propensity",
            type=float,
            dest="known_propensity",
            metavar="VALUE",
        )
        parser.add_argument(
            "--variance-mode",
            choices=("homoskedastic", "regression"),
            dest="variance_mode",
        )
        parser.add_argument(
            "--moment-model",
            choices=("auto", "ridge", "lognormal"),
            dest="moment_model",
        )
        parser.add_argument("--lambda-grid", dest="lambda_grid", metavar="L1,L2,...")
        parser.add_argument("--cv-folds", type=int, dest="cv_folds")

    def flags(self, args: argparse.Namespace) -> Dict[str, Any]:
        params = args.estimand_param
        grid = args.lambda_grid
        return {
            "data": args.data,
            "target": args.target,
            "estimand": args.estimand,
            "estimand_params": parse_params(params) if params else None,
            "k_folds": args.k_folds,
            "clip_propensity": args.clip_propensity,
            "known_propensity": args.known_propensity,
            "variance_mode": args.variance_mode,
            "moment_model": args.moment_model,
            "lambda_grid": None if grid is None else parse_lambda_grid(grid),
            "cv_folds": args.cv_folds,
        }

    def run_with_config(self, config: RunConfig) -> int:
        if config.data is None:
            raise UsageError("analyze needs --data")
        data = ingest_csv(config.data)
        threads = Flags.resolve_threads(config.threads)
        inference = config.inference_config(threads=threads)
        logger.info(
            "analyzing %s (n=%d, target=%s)", config.data, data.n, config.target
        )

        result: IntervalResult
        if config.target == "ols":
            result = ols_coefficient_bounds(data, inference)
        elif config.target == "difference-variance":
            result = difference_variance_bounds(data, inference)
        else:
            result = infer(data, config.make_estimand(), inference)

        report_doc = build_report(
            self.name, config.echo(), config.seeds(), result.to_dict()
        )
        write_report(report_doc, config.out)
        return EXIT_OK
