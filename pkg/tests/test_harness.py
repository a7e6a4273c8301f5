import unittest
import json
import tempfile
import warnings
from pathlib import Path

import pandas as pd
from sympy import Rational

from mceval.bsde import binomial_grid
from mceval.evaluate import (
    CounterexampleEvaluation,
    PrincipleOracle,
    PrincipleSpec,
    RiskNeutralOracle,
    TwoStepEvaluation,
    canonical_counterexample_template,
)
from mceval.harness import AXIOMS, CheckConfig, OracleFailure, check_axioms, load_check_config, read_payoff, run_cli
from mceval.model import InvalidConfig, build_tree, partition_for, product_config
from mceval.reports import Report

RANDOM_SEED = 42

HALF = Rational(1, 2)

PRINCIPLES = ("e", "mv:alpha=2", "sd:beta=1/2", "semi:lambda=1/2", "avar:delta=1/2,level=1/2", "exp:gamma=2")
EXACT_PRINCIPLES = {"e", "mv:alpha=2", "semi:lambda=1/2", "avar:delta=1/2,level=1/2"}


def insurance_config():
    return product_config(
        stock_moves=[(2, HALF), (HALF, HALF)],
        insurance_moves=[(0, HALF), (1, HALF)],
    )


class TestCheckConfig(unittest.TestCase):
    def test_defaults(self):
        cfg = CheckConfig()
        self.assertEqual(cfg.axioms, AXIOMS)
        self.assertEqual(cfg.trials, 10000)
        self.assertEqual(cfg.exhaustive_limit, 4096)
        self.assertFalse(cfg.market)
        self.assertIsNone(cfg.pnorm)

    def test_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "check.json"
            path.write_text(json.dumps({"trials": 10, "lattice": ["-1", "1/2"], "seed": 7}))
            cfg = load_check_config(path, trials=20, seed=None)
        self.assertEqual(cfg.trials, 20)
        self.assertEqual(cfg.seed, 7)
        self.assertEqual(cfg.lattice, (-1, HALF))

    def test_invalid_configs(self):
        with self.assertRaises(InvalidConfig):
            CheckConfig({"lattices": [0, 1]})
        with self.assertRaises(InvalidConfig):
            CheckConfig(axioms=["normalisation"])
        with self.assertRaises(InvalidConfig):
            CheckConfig(trials=0)
        with self.assertRaises(InvalidConfig):
            CheckConfig(pnorm={"p": 2})
        with self.assertRaises(InvalidConfig):
            CheckConfig(pnorm={"p": 2, "lam": 1, "norm": "L2"})
        with self.assertRaises(InvalidConfig):
            CheckConfig.from_json("[1, 2]")
        with self.assertRaises(InvalidConfig):
            CheckConfig.from_json("{trials: 1}")
        with self.assertRaises(InvalidConfig):
            CheckConfig(lattice=["1/"]).lattice


class TestPrincipleAxioms(unittest.TestCase):
    def setUp(self):
        self.tree = build_tree(insurance_config())
        self.g = partition_for(self.tree, "G")

    def check(self, op, market):
        cfg = CheckConfig(trials=100, market=market, seed=RANDOM_SEED)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return check_axioms(op, self.tree, self.g, cfg)

    def test_principles(self):
        for text in PRINCIPLES:
            with self.subTest(principle=text):
                report = self.check(PrincipleOracle(PrincipleSpec.parse(text), self.g), market=False)
                self.assertTrue(report.passed)
                for axiom in ("normalization", "cash_invariance", "convexity", "local"):
                    self.assertTrue(report[axiom].passed)
                if text in EXACT_PRINCIPLES:
                    self.assertEqual(report.mode, "rational-exact")

    def test_two_step_principles(self):
        for text in PRINCIPLES:
            with self.subTest(principle=text):
                report = self.check(TwoStepEvaluation(text, self.tree, self.g), market=True)
                self.assertTrue(report.passed)
                self.assertTrue(report["market_consistency"].required)
                self.assertTrue(report["market_consistency"].passed)
                self.assertTrue(report["market_local"].passed)
                if text in EXACT_PRINCIPLES:
                    self.assertEqual(report.mode, "rational-exact")


class TestCheckAxioms(unittest.TestCase):
    def setUp(self):
        self.tree = build_tree(insurance_config())

    def test_risk_neutral_pricing(self):
        cfg = CheckConfig(trials=40, market=True, seed=RANDOM_SEED, pnorm={"p": 1, "lam": 1, "measure": "Q"})
        with self.assertWarns(UserWarning):
            report = check_axioms(RiskNeutralOracle(self.tree), self.tree, cfg=cfg)
        self.assertTrue(report.passed)
        self.assertEqual(report.mode, "rational-exact")
        self.assertEqual(report.status("cash_invariance"), "pass-exhaustive")
        self.assertEqual(report.status("convexity"), "pass-sampled(40)")
        self.assertEqual(report.status("fatou"), "skipped")
        self.assertTrue(report["market_consistency"].required)
        self.assertIn("pnorm", report)
        self.assertEqual(report.names[-1], "fatou")

    def test_optional_rows_do_not_fail_the_report(self):
        g = partition_for(self.tree, "G")
        op = PrincipleOracle(PrincipleSpec.mean_variance(4), g)
        cfg = CheckConfig(axioms=["normalization", "monotonicity", "market_consistency"], trials=500, seed=RANDOM_SEED)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = check_axioms(op, self.tree, cfg=cfg)
        self.assertTrue(report["monotonicity"].failed)
        self.assertFalse(report["monotonicity"].required)
        self.assertTrue(report["market_consistency"].failed)
        self.assertTrue(report.passed)
        self.assertIn("optional", report.summary())

    def test_counterexample_is_not_market_local(self):
        template = canonical_counterexample_template()
        op = CounterexampleEvaluation(template)
        cfg = CheckConfig(axioms=["market_local"], lattice=[0, 1], market=True, seed=RANDOM_SEED)
        report = check_axioms(op, template.tree, cfg=cfg)
        self.assertFalse(report.passed)
        self.assertTrue(report["market_local"].failed)
        self.assertIsNotNone(report["market_local"].witness)

    def test_failing_oracle(self):
        g = partition_for(self.tree, "G")

        def broken(H):
            raise ZeroDivisionError("division by zero")

        with self.assertRaises(OracleFailure):
            check_axioms(broken, self.tree, g, CheckConfig(axioms=["normalization"]))

    def test_invalid_pnorm_measure(self):
        cfg = CheckConfig(axioms=["pnorm"], pnorm={"p": 1, "lam": 1, "measure": "R"})
        with self.assertRaises(InvalidConfig):
            check_axioms(RiskNeutralOracle(self.tree), self.tree, cfg=cfg)


class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.tree = self.dir / "tree.json"
        self.tree.write_text(insurance_config().to_json())
        self.payoff = self.dir / "payoff.csv"
        pd.DataFrame({"leaf": ["u0", "u1", "d0", "d1"], "value": ["0", "1", "0", "1"]}).to_csv(self.payoff, index=False)

    def tearDown(self):
        self.tmp.cleanup()

    def test_payoff_file(self):
        tree = build_tree(insurance_config())
        self.assertEqual(read_payoff(self.payoff, tree)["u1"], 1)
        bad = self.dir / "bad.csv"
        pd.DataFrame({"leaf": ["u0"], "amount": ["0"]}).to_csv(bad, index=False)
        with self.assertRaises(InvalidConfig):
            read_payoff(bad, tree)

    def test_usage_errors(self):
        self.assertEqual(run_cli(["evaluate", "--principle", "mv:alpha=1", "--payoff", str(self.payoff)]), 2)
        args = ["evaluate", "--tree", str(self.tree), "--principle", "mv:alpha=1", "--payoff", str(self.payoff)]
        self.assertEqual(run_cli(args), 2)
        args = ["evaluate", "--tree", str(self.tree), "--principle", "median", "--payoff", str(self.payoff), "--out", str(self.dir / "v.csv")]
        self.assertEqual(run_cli(args), 2)
        self.assertEqual(run_cli(["--help"]), 0)

    def test_evaluate(self):
        out = self.dir / "value.csv"
        args = ["evaluate", "--tree", str(self.tree), "--principle", "mv:alpha=2", "--payoff", str(self.payoff), "--two-step", "--out", str(out)]
        self.assertEqual(run_cli(args), 0)
        frame = pd.read_csv(out, dtype=str)
        self.assertEqual(frame.loc[0, "value"], "3/4")
        self.assertTrue(out.with_name("value.csv.txt").exists())

        out = self.dir / "given.csv"
        args = ["evaluate", "--tree", str(self.tree), "--principle", "e", "--payoff", str(self.payoff), "--given", "FS:1", "--out", str(out)]
        self.assertEqual(run_cli(args), 0)
        self.assertEqual(list(pd.read_csv(out, dtype=str)["value"]), ["1/2", "1/2"])

    def test_dynamic(self):
        out = self.dir / "dynamic.csv"
        args = ["dynamic", "--tree", str(self.tree), "--principle", "mv:alpha=2", "--payoff", str(self.payoff), "--emit-path", "--out", str(out)]
        self.assertEqual(run_cli(args), 0)
        self.assertEqual(len(pd.read_csv(out)), 4)

    def test_superrep(self):
        out = self.dir / "bounds.csv"
        args = ["superrep", "--tree", str(self.tree), "--payoff", str(self.payoff), "--lp", "--out", str(out)]
        self.assertEqual(run_cli(args), 0)
        frame = pd.read_csv(out, dtype=str)
        self.assertEqual(frame.loc[0, "sub_replication"], "0")
        self.assertEqual(frame.loc[0, "super_replication"], "1")
        self.assertIn("lp_upper", frame.columns)

    def test_check_axioms(self):
        config = self.dir / "check.json"
        config.write_text(json.dumps({"axioms": ["normalization", "cash_invariance", "local"]}))
        out = self.dir / "axioms.csv"
        args = ["check-axioms", "--tree", str(self.tree), "--principle", "e", "--config", str(config), "--trials", "20", "--out", str(out)]
        self.assertEqual(run_cli(args), 0)
        report = Report.from_csv(out)
        self.assertEqual(report.names, ["normalization", "cash_invariance", "local", "fatou"])

    def test_bsde_solve(self):
        grid = self.dir / "grid.json"
        grid.write_text(json.dumps(binomial_grid(Rational(1, 4), 2, mu=1).to_dict()))
        solution = self.dir / "bsde.csv"
        args = ["bsde-solve", "--model", str(grid), "--driver", "mv:alpha=1", "--emit-solution", str(solution), "--samples", "100"]
        self.assertEqual(run_cli(args), 0)
        self.assertEqual(len(pd.read_csv(solution)), 21)
        checks = Report.from_csv(self.dir / "bsde.checks.csv")
        self.assertEqual(
            checks.names,
            ["reconstruction", "orthogonality", "drift_identity", "driver_normalization", "driver_market_consistency"],
        )
        self.assertEqual(checks.status("driver_market_consistency"), "pass-sampled(100)")

        out = self.dir / "exp.checks.csv"
        args = ["bsde-solve", "--model", str(grid), "--driver", "exp:gamma=2", "--emit-solution", str(self.dir / "exp.csv"), "--samples", "50", "--out", str(out)]
        self.assertEqual(run_cli(args), 0)
        self.assertNotIn("drift_identity", Report.from_csv(out))

        self.assertEqual(run_cli(["bsde-solve", "--model", str(grid), "--driver", "e", "--emit-solution", str(solution)]), 2)
        self.assertEqual(run_cli(["bsde-solve", "--model", str(grid), "--driver", "mv:alpha=1"]), 2)
        self.assertEqual(run_cli(["bsde-solve", "--model", str(grid), "--driver", "custom-table", "--out", str(out)]), 2)

    def test_bsde_custom_table_driver(self):
        grid = self.dir / "grid.json"
        grid.write_text(json.dumps(binomial_grid(Rational(1, 4), 2, mu=1).to_dict()))
        table = self.dir / "driver.csv"
        rows = {"t": [0, 0], "zf": ["1", "-1"], "z": ["2", "2"], "ztilde": ["", ""], "g": ["3", "1"]}
        pd.DataFrame(rows).to_csv(table, index=False)
        out = self.dir / "driver_check.csv"
        args = ["bsde-solve", "--model", str(grid), "--driver", f"custom-table:{table}", "--out", str(out)]
        self.assertEqual(run_cli(args), 0)
        self.assertEqual(Report.from_csv(out).status("market_consistency"), "pass-exhaustive")

        rows["g"] = ["3", "2"]
        pd.DataFrame(rows).to_csv(table, index=False)
        self.assertEqual(run_cli(args), 1)

    def test_counterexample_and_report(self):
        out = self.dir / "counterexample.csv"
        self.assertEqual(run_cli(["counterexample", "--trials", "100", "--seed", str(RANDOM_SEED), "--out", str(out)]), 0)
        self.assertTrue(Report.from_csv(out).passed)

        combined = self.dir / "combined.csv"
        self.assertEqual(run_cli(["report", str(out), "--out", str(combined)]), 0)
        self.assertIn("counterexample:strict_local_gap", Report.from_csv(combined))

        empty = self.dir / "empty.csv"
        Report(results=[]).to_csv(empty)
        self.assertEqual(run_cli(["report", str(empty)]), 0)
        self.assertEqual(run_cli(["counterexample", "--z-high", "1", "--trials", "50", "--out", str(out)]), 1)
