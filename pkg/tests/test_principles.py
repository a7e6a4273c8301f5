import unittest
import math
import random

from sympy import Integer, Rational

from mceval import numerics
from mceval.evaluate import (
    InvalidLevel,
    InvalidSpec,
    PrincipleOracle,
    PrincipleSpec,
    avar,
    evaluate,
    local_glue,
    var,
)
from mceval.evaluate.principles import avar_value, principle_value, resolve_kind, var_value
from mceval.model import (
    ConditionalValue,
    NotMeasurable,
    Partition,
    Payoff,
    build_tree,
    partition_for,
    product_config,
)

RANDOM_SEED = 42

HALF = Rational(1, 2)


def coin():
    return {"a": HALF, "b": HALF}


def four_leaves():
    return build_tree(
        product_config(
            stock_moves=[(2, HALF), (HALF, HALF)],
            insurance_moves=[(0, HALF), (1, HALF)],
        )
    )


class TestPrincipleSpec(unittest.TestCase):
    def test_aliases(self):
        self.assertEqual(resolve_kind("mv"), "MeanVariance")
        self.assertEqual(resolve_kind("CVaR"), "AVaR")
        self.assertEqual(resolve_kind("entropic"), "Exponential")
        with self.assertRaises(InvalidSpec):
            resolve_kind("median")

    def test_parse(self):
        spec = PrincipleSpec.parse("mv:alpha=1")
        self.assertEqual(spec, PrincipleSpec.mean_variance(1))

        spec = PrincipleSpec.parse("avar:delta=1/2,level=1/4")
        self.assertEqual(spec.delta, HALF)
        self.assertEqual(spec.avar_level, Rational(1, 4))

        spec = PrincipleSpec.parse('{"kind": "semi", "params": {"lambda": "0.5", "q": 2}}')
        self.assertEqual(spec.lambda_, HALF)
        self.assertEqual(spec.q_exp, 2)

        self.assertEqual(PrincipleSpec.parse("e"), PrincipleSpec.expectation())

    def test_text_round_trip(self):
        for text in ("mv:alpha=1", "sd:beta=1/2", "avar:delta=1,avar_level=1/4", "exp:gamma=2", "e"):
            with self.subTest(text=text):
                spec = PrincipleSpec.parse(text)
                self.assertEqual(PrincipleSpec.parse(spec.to_text()), spec)

    def test_invalid_parameters(self):
        with self.assertRaises(InvalidSpec):
            PrincipleSpec.mean_variance(-1)
        with self.assertRaises(InvalidSpec):
            PrincipleSpec.exponential(0)
        with self.assertRaises(InvalidSpec):
            PrincipleSpec.semi_deviation(1, q_exp=HALF)
        with self.assertRaises(InvalidSpec):
            PrincipleSpec.parse("mv:beta=1")
        with self.assertRaises(InvalidSpec):
            PrincipleSpec.parse("mv:alpha")
        with self.assertRaises(InvalidSpec):
            PrincipleSpec.parse("mv:alpha=x+")
        with self.assertRaises(InvalidLevel):
            PrincipleSpec.avar(1, 0)
        with self.assertRaises(InvalidLevel):
            PrincipleSpec.avar(1, Rational(3, 2))

    def test_properties(self):
        self.assertTrue(PrincipleSpec.avar(1, HALF).is_coherent)
        self.assertFalse(PrincipleSpec.mean_variance(1).is_coherent)
        self.assertFalse(PrincipleSpec.exponential(1).is_coherent)
        self.assertTrue(PrincipleSpec.semi_deviation(1).is_monotone)
        self.assertFalse(PrincipleSpec.std_dev(1).is_monotone)
        self.assertFalse(PrincipleSpec.std_dev(1).exact)
        self.assertTrue(PrincipleSpec.mean_variance(3).exact)


class TestPrincipleValues(unittest.TestCase):
    def test_mean_variance(self):
        part = Partition.trivial(coin())
        value = evaluate(PrincipleSpec.mean_variance(2), Payoff({"a": 1, "b": -1}), part)
        self.assertEqual(value.scalar(), 1)

    def test_standard_deviation(self):
        value = principle_value(PrincipleSpec.std_dev(HALF), [0, 2], [HALF, HALF])
        self.assertEqual(value, Rational(3, 2))
        value = principle_value(PrincipleSpec.std_dev(1), [0, 1], [HALF, HALF])
        self.assertIsInstance(value, Rational)
        value = principle_value(PrincipleSpec.std_dev(1), [0, 1], [Rational(1, 3), Rational(2, 3)])
        self.assertIsInstance(value, float)
        self.assertAlmostEqual(value, 2 / 3 + math.sqrt(2) / 3)

    def test_semi_deviation(self):
        value = principle_value(PrincipleSpec.semi_deviation(1), [0, 2], [HALF, HALF])
        self.assertEqual(value, Rational(3, 2))
        value = principle_value(PrincipleSpec.semi_deviation(1, 2), [0, 4], [HALF, HALF])
        # E[(H - 2)_+^2]^(1/2) = sqrt(2)
        self.assertAlmostEqual(float(value), 2 + math.sqrt(2))

    def test_avar_principle(self):
        probs = [Rational(1, 4)] * 4
        spec = PrincipleSpec.avar(1, HALF)
        self.assertEqual(principle_value(spec, [1, 2, 3, 4], probs), Rational(7, 2))
        spec = PrincipleSpec.avar(HALF, HALF)
        self.assertEqual(principle_value(spec, [1, 2, 3, 4], probs), 3)

    def test_exponential(self):
        value = principle_value(PrincipleSpec.exponential(1), [0, math.log(4)], [HALF, HALF])
        self.assertAlmostEqual(value, math.log(2.5))

    def test_exponential_large_values(self):
        value = principle_value(PrincipleSpec.exponential(1), [1000, 1001], [HALF, HALF])
        self.assertTrue(math.isfinite(value))
        self.assertAlmostEqual(value, 1000 + math.log((1 + math.e) / 2))

    def test_constants_are_preserved(self):
        for spec in (
            PrincipleSpec.mean_variance(3),
            PrincipleSpec.std_dev(2),
            PrincipleSpec.semi_deviation(1, 3),
            PrincipleSpec.avar(1, Rational(1, 10)),
            PrincipleSpec.exponential(2),
        ):
            with self.subTest(spec=str(spec)):
                self.assertEqual(principle_value(spec, [Rational(7, 3)] * 3, [Rational(1, 3)] * 3), Rational(7, 3))

    def test_cash_invariance_on_random_payoffs(self):
        rng = random.Random(RANDOM_SEED)
        probs = [Rational(1, 6), Rational(1, 3), HALF]
        for spec in (PrincipleSpec.mean_variance(1), PrincipleSpec.avar(HALF, Rational(1, 3)), PrincipleSpec.semi_deviation(1)):
            for _ in range(20):
                values = [Integer(rng.randint(-3, 3)) for _ in probs]
                m = Integer(rng.randint(-3, 3))
                shifted = principle_value(spec, [v + m for v in values], probs)
                self.assertEqual(shifted, principle_value(spec, values, probs) + m)


class TestTailMeasures(unittest.TestCase):
    def test_avar_values(self):
        probs = [Rational(1, 4)] * 4
        self.assertEqual(avar_value([1, 2, 3, 4], probs, HALF), Rational(7, 2))
        self.assertEqual(avar_value([1, 2, 3, 4], probs, 1), Rational(5, 2))
        self.assertEqual(avar_value([0, 10], [Rational(9, 10), Rational(1, 10)], Rational(1, 20)), 10)

    def test_var_values(self):
        probs = [Rational(1, 4)] * 4
        self.assertEqual(var_value([1, 2, 3, 4], probs, HALF), 2)
        self.assertEqual(var_value([1, 2, 3, 4], probs, 1), 1)
        self.assertEqual(var_value([0, 10], [Rational(9, 10), Rational(1, 10)], Rational(1, 20)), 10)

    def test_avar_dominates_var(self):
        tree = four_leaves()
        part = partition_for(tree, "trivial")
        rng = random.Random(RANDOM_SEED)
        for _ in range(20):
            H = Payoff({leaf: rng.randint(-5, 5) for leaf in tree.leaves})
            for level in (Rational(1, 4), HALF, 1):
                self.assertTrue(var(H, part, level).leq(avar(H, part, level)))

    def test_invalid_level(self):
        part = Partition.trivial(coin())
        with self.assertRaises(InvalidLevel):
            avar(Payoff({"a": 0, "b": 1}), part, 0)


class TestConditionalEvaluation(unittest.TestCase):
    def setUp(self):
        self.tree = four_leaves()
        self.fs = partition_for(self.tree, "FS:1")

    def test_blockwise(self):
        H = Payoff({"u0": 1, "u1": -1, "d0": 5, "d1": 5})
        value = evaluate(PrincipleSpec.mean_variance(2), H, self.fs)
        self.assertEqual(value.values, (Integer(1), Integer(5)))

    def test_oracle(self):
        oracle = PrincipleOracle(PrincipleSpec.mean_variance(2), self.fs)
        H = Payoff({"u0": 1, "u1": -1, "d0": 0, "d1": 2})
        self.assertEqual(oracle(H).values, (Integer(1), Integer(2)))
        self.assertEqual(oracle.describe(), "mv:alpha=2")
        with self.assertRaises(InvalidSpec):
            evaluate("mv:alpha=2", H, self.fs)

    def test_local_glue(self):
        a = ConditionalValue(self.fs, [1, 2])
        b = ConditionalValue(self.fs, [3, 4])
        glued = local_glue([(self.fs.union([0]), a), (self.fs.union([1]), b)])
        self.assertEqual(glued.values, (Integer(1), Integer(4)))

        with self.assertRaises(NotMeasurable):
            local_glue([(self.fs.union([0]), a)])
        with self.assertRaises(NotMeasurable):
            local_glue([(self.fs.union([0, 1]), a), (self.fs.union([1]), b)])
        with self.assertRaises(NotMeasurable):
            local_glue([(["u0"], a), (["u1", "d0", "d1"], b)])
        with self.assertRaises(NotMeasurable):
            local_glue([])

    def test_local_property_of_principles(self):
        spec = PrincipleSpec.avar(HALF, HALF)
        X = Payoff({"u0": 1, "u1": 7, "d0": 0, "d1": 2})
        Y = Payoff({"u0": -3, "u1": 4, "d0": 9, "d1": 1})
        event = self.fs.union([0])
        mixed = Payoff({leaf: X[leaf] if leaf in event else Y[leaf] for leaf in self.tree.leaves})
        expected = local_glue(
            [(event, evaluate(spec, X, self.fs)), (self.fs.union([1]), evaluate(spec, Y, self.fs))]
        )
        self.assertEqual(evaluate(spec, mixed, self.fs).values, expected.values)

    def test_exactness(self):
        H = Payoff({"u0": 1, "u1": 2, "d0": 3, "d1": 5})
        value = evaluate(PrincipleSpec.semi_deviation(HALF), H, self.fs)
        self.assertTrue(all(numerics.is_exact(v) for v in value))
