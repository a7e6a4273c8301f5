import unittest
import random

from sympy import Integer, Rational

from mceval import numerics
from mceval.evaluate import (
    NonpositiveNumeraire,
    PrincipleOracle,
    PrincipleSpec,
    RiskNeutralOracle,
    TwoStepEvaluation,
    financial_agreement_witness,
    is_market_consistent_witness,
    market_local_witness,
    martingale_bounds,
    numeraire_transform,
    sub_replication,
    super_replication,
    two_step,
)
from mceval.model import (
    IncompleteMarket,
    Payoff,
    build_tree,
    partition_for,
    payoffs,
    product_config,
    random_config,
)

RANDOM_SEED = 42

HALF = Rational(1, 2)


def insurance_tree(steps=1, bond_rate=0):
    return build_tree(
        product_config(
            stock_moves=[(2, HALF), (HALF, HALF)],
            insurance_moves=[(0, HALF), (1, HALF)],
            steps=steps,
            bond_rate=bond_rate,
        )
    )


class TestTwoStepValues(unittest.TestCase):
    def setUp(self):
        self.tree = insurance_tree()
        self.spec = PrincipleSpec.mean_variance(2)

    def test_financial_payoff_is_priced_risk_neutrally(self):
        S = payoffs.financial(self.tree, lambda s: s[0])
        for spec in (self.spec, PrincipleSpec.avar(1, HALF), PrincipleSpec.semi_deviation(1)):
            with self.subTest(spec=str(spec)):
                self.assertEqual(two_step(spec, S, self.tree).scalar(), 1)

    def test_pure_insurance_payoff(self):
        Y = payoffs.insurance(self.tree)
        # Y is independent of the stock: the inner value is 1/2 + 1/4 on both blocks
        self.assertEqual(two_step(self.spec, Y, self.tree).scalar(), Rational(3, 4))

    def test_equity_linked_payoff(self):
        H = payoffs.equity_linked(self.tree, lambda s: s[0])
        oracle = TwoStepEvaluation(self.spec, self.tree)
        self.assertEqual(oracle.inner(H).values, (Integer(2), Rational(5, 16)))
        self.assertEqual(oracle(H).scalar(), Rational(7, 8))
        self.assertEqual(oracle.describe(), "two-step mv:alpha=2")

    def test_principle_text(self):
        H = payoffs.equity_linked(self.tree, lambda s: s[0])
        oracle = TwoStepEvaluation("mv:alpha=2", self.tree)
        self.assertEqual(oracle.spec, self.spec)
        self.assertEqual(oracle.describe(), "two-step mv:alpha=2")
        self.assertEqual(oracle(H).scalar(), Rational(7, 8))

    def test_expectation_inner_principle_is_risk_neutral_pricing(self):
        H = Payoff({"u0": 3, "u1": -1, "d0": 2, "d1": 5})
        expected = RiskNeutralOracle(self.tree)(H)
        self.assertEqual(two_step(PrincipleSpec.expectation(), H, self.tree).values, expected.values)
        self.assertEqual(expected.scalar(), Rational(1, 3) * 1 + Rational(2, 3) * Rational(7, 2))

    def test_without_financial_risk(self):
        tree = build_tree(
            product_config(stock_moves=[(1, 1)], insurance_moves=[(0, HALF), (2, HALF)])
        )
        H = payoffs.insurance(tree)
        g = partition_for(tree, "G")
        self.assertEqual(two_step(self.spec, H, tree).values, PrincipleOracle(self.spec, g)(H).values)

    def test_conditional_initial_information(self):
        tree = insurance_tree(steps=2)
        g = partition_for(tree, "F:1")
        H = payoffs.insurance(tree)
        value = two_step(self.spec, H, tree, g)
        self.assertEqual(len(value), 4)
        # Y_1 is known at time 1 and the second increment is worth 3/4
        self.assertEqual(value.at("u0u0"), Rational(3, 4))
        self.assertEqual(value.at("u1u0"), Rational(7, 4))

    def test_incomplete_market(self):
        cfg = product_config(stock_moves=[(2, Rational(1, 3)), (1, Rational(1, 3)), (HALF, Rational(1, 3))])
        with self.assertRaises(IncompleteMarket):
            TwoStepEvaluation(self.spec, build_tree(cfg))


class TestNumeraire(unittest.TestCase):
    def setUp(self):
        self.spec = PrincipleSpec.mean_variance(2)

    def test_stock_numeraire_agrees_with_bond(self):
        tree = insurance_tree()
        H = payoffs.equity_linked(tree, lambda s: s[0])
        value = numeraire_transform(0, H, tree, self.spec)
        self.assertEqual(value.values, two_step(self.spec, H, tree).values)
        self.assertEqual(value.notes, ("numeraire: stock 0",))
        self.assertEqual(numeraire_transform("bond", H, tree, self.spec).scalar(), Rational(7, 8))

    def test_numeraire_with_interest(self):
        tree = insurance_tree(steps=2, bond_rate=Rational(1, 4))
        H = payoffs.insurance(tree, lambda y: y * y)
        self.assertEqual(
            numeraire_transform(0, H, tree, self.spec).values,
            two_step(self.spec, H, tree).values,
        )

    def test_unknown_stock(self):
        tree = insurance_tree()
        with self.assertRaises(NonpositiveNumeraire):
            numeraire_transform(1, payoffs.insurance(tree), tree, self.spec)


class TestWitnessSearch(unittest.TestCase):
    def setUp(self):
        self.tree = insurance_tree()
        self.spec = PrincipleSpec.mean_variance(2)

    def test_two_step_is_market_consistent(self):
        oracle = TwoStepEvaluation(self.spec, self.tree)
        result = is_market_consistent_witness(oracle, self.tree, trials=300, seed=RANDOM_SEED)
        self.assertTrue(result.passed)
        self.assertEqual(result.status, "pass-sampled(300)")
        self.assertEqual(result.seed, RANDOM_SEED)

        result = financial_agreement_witness(oracle, self.tree)
        self.assertEqual(result.status, "pass-exhaustive")
        self.assertEqual(result.trials, 25)

    def test_plain_principle_is_not_market_consistent(self):
        g = partition_for(self.tree, "G")
        oracle = PrincipleOracle(PrincipleSpec.expectation(), g)
        result = financial_agreement_witness(oracle, self.tree)
        self.assertTrue(result.failed)
        self.assertNotEqual(result.witness["lhs"], result.witness["rhs"])
        # Replaying the witness reproduces the violation
        HS = Payoff({leaf: Rational(v) for leaf, v in result.witness["H_S"].items()})
        self.assertEqual(oracle(HS)[0], result.witness["lhs"])

        result = is_market_consistent_witness(oracle, self.tree, trials=200, seed=RANDOM_SEED)
        self.assertTrue(result.failed)

    def test_two_step_is_market_local(self):
        oracle = TwoStepEvaluation(self.spec, self.tree)
        result = market_local_witness(oracle, self.tree, trials=300, seed=RANDOM_SEED)
        self.assertTrue(result.passed)

    def test_random_trees(self):
        for offset in range(3):
            tree = build_tree(random_config(RANDOM_SEED + offset, steps=2))
            oracle = TwoStepEvaluation(PrincipleSpec.avar(HALF, HALF), tree)
            with self.subTest(seed=RANDOM_SEED + offset):
                result = is_market_consistent_witness(oracle, tree, trials=100, seed=RANDOM_SEED)
                self.assertTrue(result.passed)


class TestRandomTrees(unittest.TestCase):
    def test_financial_agreement_matches_market_consistency(self):
        small = (Integer(-1), Integer(0), Integer(1))
        for offset in range(100):
            tree = build_tree(random_config(RANDOM_SEED + offset, steps=2))
            self.assertEqual(len(tree.leaves), 8)
            g = partition_for(tree, "G")
            oracles = (
                TwoStepEvaluation("mv:alpha=1", tree, g),
                PrincipleOracle(PrincipleSpec.expectation(), g),
                PrincipleOracle(PrincipleSpec.mean_variance(1), g),
            )
            for oracle in oracles:
                with self.subTest(seed=RANDOM_SEED + offset, oracle=oracle.describe()):
                    agreement = financial_agreement_witness(oracle, tree, g, trials=30, seed=RANDOM_SEED, lattice=small)
                    consistency = is_market_consistent_witness(oracle, tree, g, trials=30, seed=RANDOM_SEED, lattice=small)
                    self.assertEqual(agreement.passed, consistency.passed)

    def test_numeraire_identity(self):
        specs = [PrincipleSpec.parse(text) for text in ("mv:alpha=1", "sd:beta=1/2", "semi:lambda=1", "avar:delta=1/2,level=1/4", "exp:gamma=3")]
        for i in range(100):
            rng = random.Random(f"{RANDOM_SEED}:{i}")
            bond_rate = rng.choice((0, Rational(1, 10)))
            tree = build_tree(random_config(RANDOM_SEED + i, steps=2, bond_rate=bond_rate))
            H = Payoff({leaf: Integer(rng.randint(-3, 3)) for leaf in tree.leaves})
            spec = specs[i % len(specs)]
            with self.subTest(case=i, spec=spec.to_text()):
                value = numeraire_transform(0, H, tree, spec)
                expected = two_step(spec, H, tree)
                self.assertTrue(numerics.close(value.scalar(), expected.scalar()))


class TestReplicationBounds(unittest.TestCase):
    def setUp(self):
        self.tree = insurance_tree()

    def test_super_and_sub_replication(self):
        Y = payoffs.insurance(self.tree)
        self.assertEqual(super_replication(Y, self.tree).scalar(), 1)
        self.assertEqual(sub_replication(Y, self.tree).scalar(), 0)
        H = payoffs.equity_linked(self.tree, lambda s: s[0])
        self.assertEqual(super_replication(H, self.tree).scalar(), 1)

    def test_two_step_lies_between_bounds(self):
        spec = PrincipleSpec.avar(1, HALF)
        H = Payoff({"u0": 3, "u1": -1, "d0": 2, "d1": 5})
        value = two_step(spec, H, self.tree).scalar()
        self.assertLessEqual(sub_replication(H, self.tree).scalar(), value)
        self.assertLessEqual(value, super_replication(H, self.tree).scalar())

    def test_martingale_bounds(self):
        H = Payoff({"u0": 3, "u1": -1, "d0": 2, "d1": 5})
        low, high = martingale_bounds(H, self.tree)
        self.assertAlmostEqual(low.scalar(), float(sub_replication(H, self.tree).scalar()))
        self.assertAlmostEqual(high.scalar(), float(super_replication(H, self.tree).scalar()))

        low, high = martingale_bounds(H, self.tree, filtration="full")
        self.assertLessEqual(low.scalar(), high.scalar())

        with self.assertRaises(ValueError):
            martingale_bounds(H, self.tree, filtration="partial")
