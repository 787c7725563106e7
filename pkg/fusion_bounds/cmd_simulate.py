import argparse
from typing import Any, Dict

from ._command import EXIT_OK, FusionCommand
from .config import RunConfig, parse_lambda_grid, parse_params, parse_sweep
from .flags import Flags
from .report import build_report, write_report
from .simharness import run_monte_carlo, run_sweep


class SimulateCommand(FusionCommand):
    """Monte Carlo coverage study of a built-in design, optionally as a sweep."""

    name = "simulate"
    help = "run a seeded coverage study on a simulation design"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--dgp", help="design name (default: heavy-tail-linear)")
        parser.add_argument(
            "--dgp-param", action="append", metavar="KEY=VALUE", dest="dgp_param"
        )
        parser.add_argument("--n", type=int)
        parser.add_argument("--reps", type=int)
        parser.add_argument("--k-folds", type=int, dest="k_folds")
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
        parser.add_argument("--clip-propensity", type=float, dest="clip_propensity")
        parser.add_argument("--lambda-grid", dest="lambda_grid", metavar="L1,L2,...")
        parser.add_argument("--cv-folds", type=int, dest="cv_folds")
        parser.add_argument("--sweep", metavar="PARAM=V1,V2,...")
        parser.add_argument(
            "--known-propensity",
            action="store_true",
            default=None,
            dest="true_propensity",
            help="give the estimator the design's true propensity",
        )

    def flags(self, args: argparse.Namespace) -> Dict[str, Any]:
        grid = args.lambda_grid
        return {
            "dgp": args.dgp,
            "dgp_params": parse_params(args.dgp_param) if args.dgp_param else None,
            "n": args.n,
            "reps": args.reps,
            "k_folds": args.k_folds,
            "variance_mode": args.variance_mode,
            "moment_model": args.moment_model,
            "clip_propensity": args.clip_propensity,
            "lambda_grid": None if grid is None else parse_lambda_grid(grid),
            "cv_folds": args.cv_folds,
            "sweep": None if args.sweep is None else parse_sweep(args.sweep),
            "true_propensity": args.true_propensity,
        }

    def run_with_config(self, config: RunConfig) -> int:
        spec = config.make_dgp()
        threads = Flags.resolve_threads(config.threads)
        inference = config.inference_config()
        result: Dict[str, Any]
        if config.sweep is not None:
            param, values = config.sweep
            sweep = run_sweep(
                spec,
                param,
                values,
                config.n,
                config.reps,
                inference,
                config.seed,
                threads,
                known_propensity=config.true_propensity,
            )
            result = sweep.to_dict()
        else:
            report = run_monte_carlo(
                spec,
                config.n,
                config.reps,
                inference,
                seed=config.seed,
                threads=threads,
                known_propensity=config.true_propensity,
            )
            result = report.to_dict()
        report_doc = build_report(
            self.name, config.echo(), {"seed": config.seed}, result
        )
        write_report(report_doc, config.out)
        return EXIT_OK
