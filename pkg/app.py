"""treeflow command line.

    python app.py kernel --q 2 --t 1 --x "0:" --y "0:"
    python app.py verify --q 2
    python app.py exp-gn --q 2 --m-list 2,4,8
"""
import argparse
import sys
from typing import List, Optional

from config import (
    CACHE_ENABLED,
    EXIT_CONFIG,
    EXIT_INVARIANT,
    EXIT_NONCONVERGENCE,
    EXIT_OK,
    SUBCOMMANDS,
    RunConfig,
    resolve_seed,
)
from components.experiment_runner import run_experiment
from components.kernel_report import build_kernel_rows
from components.oracle_report import build_oracle_rows
from components.verify_suite import run_checks
from services.errors import ConfigError, TreeflowError
from services.tree_geometry import TreeParams
from utils.cache_utils import get_cache_info, kernel_cache
from utils.log_utils import log_print, setup_logging
from utils.output_writers import write_error_record, write_rows

CONFIG_KINDS = {"config", "domain", "invalid-query", "non-canonical-vertex", "invalid-trapezoid", "truncation"}
CONVERGENCE_KINDS = {"non-convergence", "tail-extrapolation", "non-finite"}
INVARIANT_KINDS = {"invariant", "atom-axiom"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _list_of(kind):
    def parse(text: str):
        try:
            return [kind(part) for part in text.split(",") if part.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}")
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--q", type=int, default=RunConfig.q)
    common.add_argument("--t", type=_list_of(float))
    common.add_argument("--d", type=_list_of(int))
    common.add_argument("--x")
    common.add_argument("--y")
    common.add_argument("--n", type=_list_of(int))
    common.add_argument("--m-list", type=_list_of(int))
    common.add_argument("--lambda-grid", type=_list_of(float))
    common.add_argument("--caps", type=_list_of(int))
    common.add_argument("--levels", type=_list_of(int))
    common.add_argument("--batch", type=int, default=RunConfig.batch)
    common.add_argument("--samples", type=int, default=RunConfig.samples)
    common.add_argument("--tol", type=float, default=RunConfig.tol)
    common.add_argument("--tmax", type=float, default=RunConfig.tmax)
    common.add_argument("--eps", type=float, default=RunConfig.eps)
    common.add_argument("--max-radius", type=int, default=RunConfig.max_radius)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="-")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--log-level")
    common.add_argument("--no-cache", action="store_true")
    common.add_argument("--quick", action="store_true")

    parser = _Parser(prog="treeflow", description="Heat, Poisson and Riesz kernels on the homogeneous tree.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = {
        "subcommand": args.subcommand, "q": args.q, "x": args.x, "y": args.y, "batch": args.batch,
        "samples": args.samples, "tol": args.tol, "tmax": args.tmax, "eps": args.eps,
        "max_radius": args.max_radius, "seed": resolve_seed(args.seed), "out": args.out,
        "format": args.format, "threads": args.threads, "quick": args.quick,
    }
    for field_name in ("t", "d", "n", "m_list", "lambda_grid", "caps", "levels"):
        value = getattr(args, field_name)
        if value is not None:
            values[field_name] = value
    return RunConfig(**values).validate()


def exit_code(result: dict) -> int:
    """Exit status for a component result."""
    if result.get("status") == "error":
        kind = result.get("kind")
        if kind in CONVERGENCE_KINDS:
            return EXIT_NONCONVERGENCE
        if kind in INVARIANT_KINDS:
            return EXIT_INVARIANT
        return EXIT_CONFIG
    kinds = {f.get("kind") for f in result.get("failures", [])}
    if kinds & INVARIANT_KINDS:
        return EXIT_INVARIANT
    if kinds & CONVERGENCE_KINDS:
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def dispatch(config: RunConfig, tree: TreeParams) -> dict:
    if config.subcommand == "kernel":
        return build_kernel_rows(config, tree)
    if config.subcommand == "oracle-compare":
        return build_oracle_rows(config, tree)
    if config.subcommand == "verify":
        return run_checks(config, tree)
    return run_experiment(config, tree)


def run(config: RunConfig) -> int:
    """Runs one validated invocation, writes its table and returns the exit status."""
    tree = TreeParams(config.q)
    log_print(f"treeflow {config.subcommand} q={config.q} seed={config.seed}")
    result = dispatch(config, tree)
    if result.get("status") == "error":
        result.pop("error", None)
        write_error_record(result)
        return exit_code(result)

    write_rows(result["rows"], config.out, config.format, result.get("columns"))
    for failure in result.get("failures", []):
        write_error_record(failure)
    if config.subcommand == "verify":
        log_print(f"verify: {result['passed']}/{result['total']} checks passed")
    code = exit_code(result)
    if code != EXIT_OK:
        log_print(f"{config.subcommand}: {len(result['failures'])} failure(s), exit {code}")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.log_level:
            setup_logging(args.log_level)
        else:
            setup_logging()
        config = config_from_args(args)
    except TreeflowError as e:
        write_error_record(e.to_record())
        return EXIT_CONFIG

    use_cache = CACHE_ENABLED and not args.no_cache
    if use_cache:
        kernel_cache.load()
    try:
        code = run(config)
    except TreeflowError as e:
        record = e.to_record()
        write_error_record(record)
        code = exit_code(record)
    if use_cache:
        kernel_cache.save()
    log_print(f"cache: {get_cache_info()}")
    return code


if __name__ == "__main__":
    sys.exit(main())
