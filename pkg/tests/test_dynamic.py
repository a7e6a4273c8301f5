import unittest
import tempfile
from pathlib import Path

import pandas as pd
from sympy import Rational

from mceval.abstract import FunctionOracle
from mceval.evaluate import (
    DynamicFamily,
    ExpectationFamily,
    FamilyOfOracles,
    PrincipleSpec,
    backward_evaluate,
    dynamic_market_consistency_check,
    monotonicity_check,
    reveal_structure_check,
    static_family,
    time_consistency_check,
)
from mceval.evaluate.dynamic import DynamicEvaluation, segments
from mceval.evaluate.sweeps import RecursiveSweep, StaticSweep, resolve_sweep
from mceval.model import build_tree, binomial_config, partition_for, payoffs, product_config

RANDOM_SEED = 42

HALF = Rational(1, 2)


def insurance_tree(reveal_times=None):
    return build_tree(
        product_config(
            stock_moves=[(2, HALF), (HALF, HALF)],
            insurance_moves=[(0, HALF), (1, HALF)],
            steps=2,
            reveal_times=reveal_times,
        )
    )


class TestBackwardEvaluation(unittest.TestCase):
    def setUp(self):
        self.tree = insurance_tree()
        self.Y = payoffs.insurance(self.tree)

    def test_recursive_mean_variance(self):
        result = backward_evaluate("mv:alpha=2", self.Y, self.tree)
        self.assertEqual(result.initial, Rational(3, 2))
        self.assertEqual(result.node_values["u1"], Rational(7, 4))
        self.assertEqual(result.node_values["d0"], Rational(3, 4))
        self.assertEqual(result[2].values, tuple(self.Y[leaf] for leaf in self.tree.leaves))

    def test_recursive_and_static_differ(self):
        spec = PrincipleSpec.avar(1, HALF)
        recursive = backward_evaluate(spec, self.Y, self.tree)
        static = backward_evaluate(spec, self.Y, self.tree, sweep="static")
        self.assertEqual(recursive.initial, 2)
        self.assertEqual(static.initial, Rational(3, 2))
        # Both agree one period before the horizon
        self.assertEqual(recursive[1].values, static[1].values)

    def test_financial_payoff_is_a_martingale(self):
        tree = build_tree(binomial_config(steps=2))
        S = payoffs.financial(tree, lambda s: s[0])
        result = backward_evaluate("mv:alpha=1", S, tree)
        self.assertEqual(result.initial, 1)
        self.assertEqual(result.node_values["u"], 2)

    def test_known_payoff_is_returned(self):
        H = payoffs.path_function(self.tree, lambda path: path[1].insurance * 3)
        result = backward_evaluate("semi:lambda=1", H, self.tree)
        self.assertEqual(result.node_values["u1"], 3)
        self.assertEqual(result.initial, Rational(9, 4))

    def test_frames(self):
        result = backward_evaluate("e", self.Y, self.tree)
        frame = result.to_frame()
        self.assertEqual(len(frame), 21)
        self.assertEqual(list(frame.columns), ["time", "node_id", "value"])
        paths = result.path_frame()
        self.assertEqual(paths.shape, (16, 3))
        self.assertEqual(paths.loc["u1u1", "t2"], "2")

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "dynamic.csv"
            result.to_csv(path, paths=True)
            self.assertEqual(len(pd.read_csv(path)), 16)

    def test_sweeps(self):
        self.assertIs(resolve_sweep("backward"), RecursiveSweep)
        self.assertIs(resolve_sweep("one-shot"), StaticSweep)
        with self.assertRaises(NameError):
            resolve_sweep("forward")
        with self.assertRaises(ValueError):
            DynamicEvaluation(self.tree, {}).as_family()


class TestTimeConsistency(unittest.TestCase):
    def setUp(self):
        self.tree = insurance_tree()
        self.Y = payoffs.insurance(self.tree)
        self.spec = PrincipleSpec.avar(1, HALF)

    def test_recursive_family_is_time_consistent(self):
        family = DynamicFamily(self.spec, self.tree)
        report = time_consistency_check(family, self.tree, payoffs=[self.Y], seed=RANDOM_SEED)
        self.assertTrue(report.passed)
        self.assertEqual(report.names, ["time_consistency[0,1]", "time_consistency[0,2]", "time_consistency[1,2]"])

        report = time_consistency_check(family, self.tree, trials=5, seed=RANDOM_SEED)
        self.assertTrue(report.passed)
        self.assertEqual(report.status("time_consistency[0,1]"), "pass-sampled(5)")

    def test_static_family_is_not_time_consistent(self):
        family = static_family(self.spec, self.tree)
        report = time_consistency_check(family, self.tree, pairs=[(0, 1)], payoffs=[self.Y])
        self.assertFalse(report.passed)
        witness = report["time_consistency[0,1]"].witness
        self.assertEqual(witness["lhs"], Rational(3, 2))
        self.assertEqual(witness["rhs"], 2)

    def test_expectation_family(self):
        report = time_consistency_check(ExpectationFamily(self.tree), self.tree, seed=RANDOM_SEED)
        self.assertTrue(report.passed)


class TestDynamicChecks(unittest.TestCase):
    def setUp(self):
        self.tree = insurance_tree()
        self.family = DynamicFamily(PrincipleSpec.mean_variance(2), self.tree)

    def test_segments(self):
        self.assertEqual(segments(self.tree), [(0, 1), (1, 2)])
        self.assertEqual(segments(insurance_tree(reveal_times=[2])), [(0, 2), (1, 2)])

    def test_reveal_structure(self):
        report = reveal_structure_check(self.family, self.tree, trials=20, seed=RANDOM_SEED)
        self.assertTrue(report.passed)
        self.assertIn("characteristic_equation[0,1]", report)
        self.assertIn("uniqueness[1,2]", report)

    def test_dynamic_market_consistency(self):
        report = dynamic_market_consistency_check(self.family, self.tree, trials=30, seed=RANDOM_SEED)
        self.assertTrue(report.passed)
        self.assertEqual(report.names, ["market_consistency[0]", "market_consistency[1]"])

    def test_monotonicity(self):
        report = monotonicity_check(DynamicFamily(PrincipleSpec.semi_deviation(1), self.tree), self.tree, trials=30, seed=RANDOM_SEED)
        self.assertTrue(report.passed)

        report = monotonicity_check(DynamicFamily(PrincipleSpec.mean_variance(4), self.tree), self.tree, trials=200, seed=RANDOM_SEED)
        self.assertFalse(report.passed)
        self.assertIn("H1", report["monotonicity"].witness)


class TestFamilyOfOracles(unittest.TestCase):
    def test_assembled_family(self):
        tree = build_tree(binomial_config(steps=2))
        expectation = ExpectationFamily(tree)
        oracles = {t: expectation.at(t) for t in (0, 1)}
        family = FamilyOfOracles(tree, oracles)
        H = payoffs.financial(tree, lambda s: s[0])
        self.assertEqual(family(0, H).scalar(), Rational(25, 16))
        self.assertEqual(family(2, H).values, tuple(H[leaf] for leaf in tree.leaves))
        report = time_consistency_check(family, tree, seed=RANDOM_SEED)
        self.assertTrue(report.passed)
        # 5 lattice values on 4 leaves
        self.assertEqual(report.status("time_consistency[0,1]"), "pass-exhaustive")
        self.assertEqual(report["time_consistency[0,1]"].trials, 625)

    def test_invalid_families(self):
        tree = build_tree(binomial_config(steps=2))
        expectation = ExpectationFamily(tree)
        with self.assertRaises(ValueError):
            FamilyOfOracles(tree, {0: expectation.at(0)})
        wrong = FunctionOracle(lambda H: expectation(0, H), partition_for(tree, "trivial"))
        with self.assertRaises(ValueError):
            FamilyOfOracles(tree, {0: expectation.at(0), 1: wrong})
