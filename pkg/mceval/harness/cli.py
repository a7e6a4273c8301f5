"""
Command-line interface.

Exit codes: 0 on success, 1 when a check fails with a witness, 2 on a usage or configuration
error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import pandas as pd

from mceval import numerics
from mceval.abstract import ParsingError, parse_number
from mceval.bsde.drivers import DriverFn, driver_exp, driver_mc_check, driver_mv
from mceval.bsde.errors import InvalidParam, NotPureInsurance, SingularProjection
from mceval.bsde.solver import drift_identity_check, solve_discrete
from mceval.evaluate.duality import canonical_counterexample_template, market_local_counterexample
from mceval.evaluate.dynamic import backward_evaluate
from mceval.evaluate.errors import ConstructionFailed, InvalidSpec, NonpositiveNumeraire, PreconditionViolated
from mceval.evaluate.principles import PrincipleOracle, evaluate
from mceval.evaluate.twostep import (
    TwoStepEvaluation,
    martingale_bounds,
    numeraire_transform,
    sub_replication,
    super_replication,
    two_step,
)
from mceval.model import payoffs
from mceval.model.errors import Arbitrage, IncompleteMarket, InvalidConfig, NotMeasurable, UnknownTime
from mceval.model.partitions import partition_for
from mceval.reports import Report

from .axioms import check_axioms
from .config import load_check_config, load_grid_model, load_tree, parse_principle, read_payoff
from .errors import OracleFailure, UsageError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

CONFIG_ERRORS = (
    InvalidConfig,
    ParsingError,
    UsageError,
    InvalidSpec,
    InvalidParam,
    UnknownTime,
    IncompleteMarket,
    Arbitrage,
    NotMeasurable,
    NonpositiveNumeraire,
    NotPureInsurance,
    SingularProjection,
    ConstructionFailed,
    PreconditionViolated,
    OracleFailure,
    NameError,
    ValueError,
    OSError,
)


def _output(args) -> Path:
    if args.out is None:
        raise UsageError(f"Subcommand '{args.command}' needs --out.")
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_summary(path: Path, text: str):
    path.with_name(path.name + ".txt").write_text(text + "\n")
    print(text)


def cmd_evaluate(args) -> int:
    tree = load_tree(args.tree)
    spec = parse_principle(args.principle)
    H = read_payoff(args.payoff, tree)
    g_part = partition_for(tree, "G")
    if args.numeraire is not None:
        value = numeraire_transform(args.numeraire, H, tree, spec, g_part)
    elif args.two_step:
        value = two_step(spec, H, tree, g_part)
    else:
        value = evaluate(spec, H, partition_for(tree, args.given))
    out = _output(args)
    value.to_csv(out)
    _write_summary(out, f"{spec}: {', '.join(value.to_record())}")
    return EXIT_OK


def cmd_dynamic(args) -> int:
    tree = load_tree(args.tree)
    spec = parse_principle(args.principle)
    H = read_payoff(args.payoff, tree)
    result = backward_evaluate(spec, H, tree, sweep=args.sweep)
    out = _output(args)
    result.to_csv(out, paths=args.emit_path)
    _write_summary(out, f"{spec} ({args.sweep}): initial value {numerics.to_text(result.initial)}")
    return EXIT_OK


DRIVER_KINDS = ("MeanVariance", "Exponential")
CUSTOM_TABLE = "custom-table"


def cmd_bsde_solve(args) -> int:
    model = load_grid_model(args.model)
    kind, _, table = args.driver.partition(":")
    if kind == CUSTOM_TABLE:
        if not table:
            raise UsageError(f"Driver '{CUSTOM_TABLE}' needs a CSV file, e.g. {CUSTOM_TABLE}:driver.csv.")
        report = driver_mc_check(DriverFn.from_csv(table), model, samples=args.samples, seed=args.seed)
        out = _output(args)
        report.to_csv(out)
        print(report.summary())
        return EXIT_OK if report.passed else EXIT_CHECK_FAILED
    spec = parse_principle(args.driver)
    if spec.kind not in DRIVER_KINDS:
        raise UsageError(f"Driver '{args.driver}' is not mv, exp or {CUSTOM_TABLE}.")
    if args.emit_solution is None:
        raise UsageError("Subcommand 'bsde-solve' needs --emit-solution.")
    tree = model.tree
    if args.payoff is not None:
        H = read_payoff(args.payoff, tree)
    elif args.terminal == "stock":
        H = payoffs.financial(tree, lambda s: s[0])
    else:
        H = payoffs.insurance(tree)
    solution = solve_discrete(spec, H, model)
    solution_path = Path(args.emit_solution)
    solution_path.parent.mkdir(parents=True, exist_ok=True)
    solution.to_csv(solution_path)

    checks = Report(title=f"BSDE of {spec}", results=[])
    checks.extend(solution.reconstruction_check())
    checks.extend(solution.orthogonality_check())
    if spec.kind == "MeanVariance":
        checks.extend(drift_identity_check(solution, model, spec.alpha))
        driver = driver_mv(spec.alpha, model)
    else:
        driver = driver_exp(spec.gamma, model)
    driver_report = driver_mc_check(driver, model, samples=args.samples, seed=args.seed)
    checks.extend(result.renamed(f"driver_{result.name}") for result in driver_report)
    checks_path = _output(args) if args.out is not None else solution_path.with_name(solution_path.stem + ".checks.csv")
    checks.to_csv(checks_path)
    print(checks.summary())
    return EXIT_OK if checks.passed else EXIT_CHECK_FAILED


def cmd_check_axioms(args) -> int:
    tree = load_tree(args.tree)
    spec = parse_principle(args.principle)
    g_part = partition_for(tree, "G")
    cfg = load_check_config(
        args.config,
        trials=args.trials,
        exhaustive_limit=args.exhaustive_limit,
        seed=args.seed,
        market=True if args.two_step else None,
    )
    op = TwoStepEvaluation(spec, tree, g_part) if args.two_step else PrincipleOracle(spec, g_part)
    report = check_axioms(op, tree, g_part, cfg)
    out = _output(args)
    report.to_csv(out)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_counterexample(args) -> int:
    template = canonical_counterexample_template(parse_number(args.z_high))
    result = market_local_counterexample(template, seed=args.seed, trials=args.trials or 500)
    report = result.to_report()
    out = _output(args)
    report.to_csv(out)
    print(report.summary())
    return EXIT_OK if result.certified else EXIT_CHECK_FAILED


def cmd_superrep(args) -> int:
    tree = load_tree(args.tree)
    H = read_payoff(args.payoff, tree)
    g_part = partition_for(tree, "G")
    low, high = sub_replication(H, tree, g_part), super_replication(H, tree, g_part)
    frame = pd.DataFrame(
        {
            "block_id": range(len(g_part)),
            "member_leaves": [";".join(block) for block in g_part.blocks],
            "sub_replication": low.to_record(),
            "super_replication": high.to_record(),
        }
    )
    if args.lp:
        lp_low, lp_high = martingale_bounds(H, tree, g_part, filtration=args.filtration)
        frame["lp_lower"] = lp_low.to_record()
        frame["lp_upper"] = lp_high.to_record()
    out = _output(args)
    frame.to_csv(out, index=False)
    _write_summary(out, frame.to_string(index=False))
    return EXIT_OK


def cmd_report(args) -> int:
    combined = Report(title="combined report")
    for path in args.reports:
        report = Report.from_csv(path)
        combined.extend(result.renamed(f"{Path(path).stem}:{result.name}") for result in report)
    if args.out is not None:
        combined.to_csv(_output(args))
    print(combined.summary())
    return EXIT_OK if combined.passed else EXIT_CHECK_FAILED


COMMANDS = {
    "evaluate": cmd_evaluate,
    "dynamic": cmd_dynamic,
    "bsde-solve": cmd_bsde_solve,
    "check-axioms": cmd_check_axioms,
    "counterexample": cmd_counterexample,
    "superrep": cmd_superrep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mceval", description="Market-consistent evaluations on finite scenario trees.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log INFO with -v, DEBUG with -vv")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output CSV path; a text summary is written next to it")
    common.add_argument("--seed", type=int, help="seed of sampled checks (default: MCEVAL_SEED or 42)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("evaluate", parents=[common], help="evaluate a payoff at the initial time")
    p.add_argument("--tree", required=True, help="tree configuration (JSON)")
    p.add_argument("--principle", required=True, help="principle, e.g. mv:alpha=1")
    p.add_argument("--payoff", required=True, help="payoff file (CSV leaf,value or JSON)")
    p.add_argument("--two-step", action="store_true", help="use the two-step market evaluation")
    p.add_argument("--numeraire", help="stock index, or 'bond', for the change of numeraire")
    p.add_argument("--given", default="G", help="conditioning information of a plain evaluation, e.g. FS:1")

    p = subparsers.add_parser("dynamic", parents=[common], help="evaluate a payoff at every time")
    p.add_argument("--tree", required=True)
    p.add_argument("--principle", required=True)
    p.add_argument("--payoff", required=True)
    p.add_argument("--sweep", default="recursive", help="recursive or static")
    p.add_argument("--emit-path", action="store_true", help="write one row per leaf path instead of per node")

    p = subparsers.add_parser("bsde-solve", parents=[common], help="solve the discrete BSDE on a grid model")
    p.add_argument("--model", required=True, help="grid model (JSON)")
    p.add_argument("--driver", required=True, help=f"mv:alpha=a, exp:gamma=g, or {CUSTOM_TABLE}:<csv> to check a tabulated driver")
    p.add_argument("--payoff", help="payoff file on the grid tree leaves")
    p.add_argument("--terminal", choices=("insurance", "stock"), default="insurance", help="payoff when no file is given")
    p.add_argument("--emit-solution", help="solution CSV path")
    p.add_argument("--samples", type=int, default=10_000, help="sampled points of the driver check")

    p = subparsers.add_parser("check-axioms", parents=[common], help="check the axioms of a principle")
    p.add_argument("--tree", required=True)
    p.add_argument("--principle", required=True)
    p.add_argument("--two-step", action="store_true", help="check the two-step market evaluation")
    p.add_argument("--config", help="check configuration (JSON)")
    p.add_argument("--trials", type=int)
    p.add_argument("--exhaustive-limit", type=int)

    p = subparsers.add_parser("counterexample", parents=[common], help="market-consistent evaluation without the market local property")
    p.add_argument("--z-high", default="3/2", help="larger value of the first density")
    p.add_argument("--trials", type=int)

    p = subparsers.add_parser("superrep", parents=[common], help="sub- and super-replication prices")
    p.add_argument("--tree", required=True)
    p.add_argument("--payoff", required=True)
    p.add_argument("--lp", action="store_true", help="add the martingale measure bounds")
    p.add_argument("--filtration", choices=("financial", "full"), default="financial")

    p = subparsers.add_parser("report", parents=[common], help="combine report CSV files")
    p.add_argument("reports", nargs="+", help="report CSV files")
    return parser


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CONFIG_ERRORS as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run_cli())
