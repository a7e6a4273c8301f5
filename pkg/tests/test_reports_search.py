import unittest
import math
import os
import tempfile
from fractions import Fraction
from pathlib import Path
from unittest import mock

import numpy as np
from sympy import Integer, Rational, sqrt

from mceval import numerics
from mceval.reports import AxiomReport, CheckResult, Report, failure, pass_status
from mceval.search import DEFAULT_SEED, LatticeSearch, default_seed

RANDOM_SEED = 42


class TestNumerics(unittest.TestCase):
    def test_coerce(self):
        self.assertEqual(numerics.coerce(3), Integer(3))
        self.assertEqual(numerics.coerce(Fraction(1, 3)), Rational(1, 3))
        self.assertEqual(numerics.coerce(np.int64(2)), Integer(2))
        self.assertIsInstance(numerics.coerce(0.5), float)
        self.assertIsInstance(numerics.coerce(sqrt(2)), float)
        with self.assertRaises(TypeError):
            numerics.coerce(True)
        with self.assertRaises(TypeError):
            numerics.coerce("1")

    def test_mixed_arithmetic_falls_back_to_float(self):
        self.assertEqual(numerics.add(Rational(1, 3), Rational(2, 3)), 1)
        self.assertIsInstance(numerics.add(Rational(1, 3), 0.5), float)
        self.assertEqual(numerics.dot([Rational(1, 2)] * 2, [1, 3]), 2)
        self.assertAlmostEqual(numerics.dot([0.5, 0.5], [1, 3]), 2.0)

    def test_roots(self):
        self.assertEqual(numerics.sqrt(Rational(9, 4)), Rational(3, 2))
        self.assertIsInstance(numerics.sqrt(2), float)
        self.assertEqual(numerics.nth_root(Rational(8, 27), 3), Rational(2, 3))
        self.assertEqual(numerics.power(Rational(1, 2), 2), Rational(1, 4))
        self.assertEqual(numerics.positive_part(-3), 0)

    def test_comparisons(self):
        self.assertTrue(numerics.close(0.1 + 0.2, Rational(3, 10)))
        self.assertFalse(numerics.close(Rational(1, 3), Rational(333333333, 1000000000)))
        self.assertTrue(numerics.close(math.inf, math.inf))
        self.assertTrue(numerics.leq(Rational(3, 10), 0.1 + 0.2))
        self.assertFalse(numerics.leq(1, Rational(1, 2)))

    def test_to_text(self):
        self.assertEqual(numerics.to_text(Rational(3, 4)), "3/4")
        self.assertEqual(numerics.to_text(0.25), "0.25")


class TestReports(unittest.TestCase):
    def setUp(self):
        self.report = Report(title="example", seed=RANDOM_SEED)
        self.report.add(CheckResult("normalization", "pass-exhaustive", 1))
        self.report.add(failure("monotonicity", {"H1": {"a": Rational(1, 2)}, "lhs": 1}, 7, RANDOM_SEED).as_optional())
        self.report.add(CheckResult("fatou", "skipped", required=False))

    def test_statuses(self):
        self.assertEqual(pass_status(True, 5), "pass-exhaustive")
        self.assertEqual(pass_status(False, 5), "pass-sampled(5)")
        self.assertTrue(self.report.passed)
        self.assertEqual(self.report.names, ["normalization", "monotonicity", "fatou"])
        self.assertEqual([r.name for r in self.report.failures], ["monotonicity"])
        self.assertIn("PASS", self.report.summary())

        self.report.add(failure("local", {"A": ["a"]}, 3))
        self.assertFalse(self.report.passed)
        with self.assertRaises(KeyError):
            self.report["convexity"]

    def test_witness_blob(self):
        blob = self.report["monotonicity"].witness_blob()
        self.assertEqual(blob, '{"H1": {"a": "1/2"}, "lhs": "1"}')
        self.assertEqual(self.report["normalization"].witness_blob(), "")

    def test_csv_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "report.csv"
            self.report.to_csv(path)
            self.assertTrue(path.with_name("report.csv.txt").exists())
            loaded = Report.from_csv(path)
        self.assertEqual(loaded.names, self.report.names)
        result = loaded["monotonicity"]
        self.assertFalse(result.required)
        self.assertEqual(result.seed, RANDOM_SEED)
        self.assertEqual(result.trials, 7)
        self.assertEqual(result.witness, {"H1": {"a": "1/2"}, "lhs": "1"})

    def test_axiom_report(self):
        report = AxiomReport(title="axioms", results=list(self.report))
        self.assertEqual(report.mode, "rational-exact")
        self.assertEqual(report.statuses["fatou"], "skipped")
        self.assertEqual(list(report.to_frame().columns), ["axiom", "status", "trials", "witness", "seed", "required", "mode"])


class TestLatticeSearch(unittest.TestCase):
    def test_exhaustive_plan(self):
        search = LatticeSearch((0, 1), exhaustive_limit=16, trials=5, seed=RANDOM_SEED)
        cases = list(search.cases(2, (1, (7, 8))))
        self.assertEqual(len(cases), 8)
        self.assertEqual(cases[0], [(0, 0), (7,)])
        self.assertTrue(search.is_exhaustive(2, (1, (7, 8))))
        self.assertEqual(search.count(2, (1, (7, 8))), 8)

    def test_sampled_plan_is_reproducible(self):
        search = LatticeSearch(exhaustive_limit=10, trials=30, seed=RANDOM_SEED)
        self.assertFalse(search.is_exhaustive(3))
        self.assertEqual(search.count(3), 30)
        first = list(search.cases(3))
        self.assertEqual(len(first), 30)
        self.assertEqual(first, list(LatticeSearch(exhaustive_limit=10, trials=30, seed=RANDOM_SEED).cases(3)))
        self.assertNotEqual(first, list(LatticeSearch(exhaustive_limit=10, trials=30, seed=RANDOM_SEED + 1).cases(3)))

    def test_invalid_trials(self):
        with self.assertRaises(ValueError):
            LatticeSearch(trials=0)

    def test_seed_from_environment(self):
        with mock.patch.dict(os.environ, {"MCEVAL_SEED": "7"}):
            self.assertEqual(default_seed(), 7)
            self.assertEqual(LatticeSearch().seed, 7)
        with mock.patch.dict(os.environ, {"MCEVAL_SEED": ""}):
            self.assertEqual(default_seed(), DEFAULT_SEED)
        with mock.patch.dict(os.environ, {"MCEVAL_SEED": "seven"}):
            with self.assertRaises(ValueError):
                default_seed()
