import unittest
import math
import random
import warnings

import numpy as np
from sympy import Integer, Rational

from mceval.evaluate import (
    BandClampWarning,
    CounterexampleEvaluation,
    DensitySet,
    EmptyFamily,
    EmptySet,
    InfeasibleBand,
    PenaltyFn,
    PrincipleOracle,
    PrincipleSpec,
    RiskNeutralOracle,
    TwoStepEvaluation,
    avar_hedged,
    canonical_counterexample_template,
    characteristic_check,
    concatenate,
    dual_eval,
    essential_supremum,
    gini_penalty,
    indicator_penalty,
    lift,
    market_local_counterexample,
    market_local_witness,
    penalty_of,
    pricing_agreement_check,
)
from mceval.evaluate.duality import CounterexampleTemplate, avar_band, greedy_band
from mceval.evaluate.errors import ConstructionFailed, PreconditionViolated
from mceval.model import (
    ConditionalValue,
    Density,
    Partition,
    Payoff,
    build_tree,
    partition_for,
    payoffs,
    product_config,
)

RANDOM_SEED = 42

HALF = Rational(1, 2)


def coin():
    return Partition.trivial({"a": HALF, "b": HALF})


def insurance_tree():
    return build_tree(
        product_config(
            stock_moves=[(2, HALF), (HALF, HALF)],
            insurance_moves=[(0, HALF), (1, HALF)],
        )
    )


class TestDualEvaluation(unittest.TestCase):
    def test_finite_set(self):
        part = coin()
        members = [Density({"a": Rational(3, 2), "b": HALF}, part), Density({"a": HALF, "b": Rational(3, 2)}, part)]
        H = Payoff({"a": 2, "b": 0})
        self.assertEqual(dual_eval(DensitySet.finite(members), None, H, part).scalar(), Rational(3, 2))

        with self.assertRaises(EmptySet):
            DensitySet.finite([])

    def test_gini_penalty_recovers_mean_variance(self):
        part = coin()
        alpha = 2
        H = Payoff({"a": 1, "b": -1})
        # The optimal signed density of the Mean-Variance principle is 1 + alpha (H - E[H])
        members = [Density({"a": 1 + alpha * w, "b": 1 - alpha * w}, part) for w in (0, HALF, 1, Rational(3, 2))]
        value = dual_eval(DensitySet.finite(members), gini_penalty(alpha, part), H, part)
        expected = PrincipleOracle(PrincipleSpec.mean_variance(alpha), part)(H)
        self.assertEqual(value.scalar(), expected.scalar())

    def test_indicator_penalty(self):
        part = coin()
        band = DensitySet.band(HALF, Rational(3, 2), part)
        inside = Density({"a": Rational(3, 2), "b": HALF}, part)
        outside = Density({"a": 2, "b": 0}, part)
        penalty = indicator_penalty(band)
        self.assertEqual(penalty(inside), 0)
        self.assertEqual(penalty(outside), math.inf)
        value = dual_eval(DensitySet.finite([inside, outside]), penalty, Payoff({"a": 1, "b": 0}), part)
        self.assertEqual(value.scalar(), Rational(3, 4))

    def test_band_maximization(self):
        part = coin()
        band = DensitySet.band(HALF, Rational(3, 2), part)
        H = Payoff({"a": 4, "b": 0})
        self.assertEqual(dual_eval(band, PenaltyFn.zero(), H, part).scalar(), 3)
        with self.assertRaises(ValueError):
            dual_eval(band, gini_penalty(1, part), H, part)

    def test_greedy_band(self):
        value, weights = greedy_band([1, 3, 2], [Rational(1, 3)] * 3, 0, 2)
        self.assertEqual(value, Rational(8, 3))
        self.assertEqual(weights, [Integer(0), Integer(2), Integer(1)])

    def test_infeasible_band(self):
        part = coin()
        with self.assertRaises(InfeasibleBand):
            DensitySet.band(-1, 2, part)
        with self.assertRaises(InfeasibleBand):
            DensitySet.band(2, 3, part)
        with self.assertRaises(InfeasibleBand):
            DensitySet.band(0, HALF, part)


class TestPenaltyOf(unittest.TestCase):
    def setUp(self):
        self.part = coin()
        self.xi = Density({"a": Rational(3, 2), "b": HALF}, self.part)

    def test_closed_form(self):
        op = PrincipleOracle(PrincipleSpec.mean_variance(2), self.part)
        self.assertEqual(penalty_of(op, self.xi, closed_form=True), Rational(1, 16))

    def test_linear_evaluation(self):
        op = PrincipleOracle(PrincipleSpec.expectation(), self.part)
        self.assertEqual(penalty_of(op, Density.unit(self.part)), 0)
        self.assertEqual(penalty_of(op, self.xi), math.inf)

    def test_search_bounds_closed_form_from_below(self):
        op = PrincipleOracle(PrincipleSpec.mean_variance(2), self.part)
        bound = penalty_of(op, self.xi)
        self.assertLessEqual(bound, Rational(1, 16))
        self.assertGreaterEqual(bound, 0)


class TestHedgedAVaR(unittest.TestCase):
    def setUp(self):
        self.tree = insurance_tree()

    def test_band(self):
        self.assertEqual(avar_band(Rational(1, 4), HALF), (Rational(1, 4), Rational(5, 4), False))
        self.assertEqual(avar_band(HALF, HALF), (Integer(0), Rational(3, 2), True))

    def test_value(self):
        Y = payoffs.insurance(self.tree)
        value = avar_hedged(Y, self.tree, Rational(1, 4), HALF)
        self.assertEqual(value.scalar(), Rational(5, 8))
        self.assertEqual(value.notes, ())

    def test_matches_grid_maximization(self):
        stock = partition_for(self.tree, "S:1")
        rng = random.Random(RANDOM_SEED)
        for delta, level in ((Rational(1, 4), HALF), (Rational(1, 8), Rational(1, 4)), (Rational(1, 3), Rational(3, 4))):
            lo, hi, _ = avar_band(delta, level)
            lo, hi = float(lo), float(hi)
            for _ in range(10):
                H = Payoff({leaf: Integer(rng.randint(-3, 3)) for leaf in self.tree.leaves})
                best = {}
                for i, (a, b) in enumerate(stock.blocks):
                    pa, pb = (float(p) for p in stock.conditional_probs(i))
                    grid = np.linspace(max(lo, (1 - pb * hi) / pa), min(hi, (1 - pb * lo) / pa), 1000)
                    value = max(pa * z * float(H[a]) + (1 - pa * z) * float(H[b]) for z in grid)
                    best.update({a: value, b: value})
                expected = RiskNeutralOracle(self.tree)(best).scalar()
                with self.subTest(delta=delta, level=level, H=H.to_record()):
                    self.assertAlmostEqual(float(avar_hedged(H, self.tree, delta, level).scalar()), expected, delta=1e-3)

    def test_zero_loading_is_risk_neutral(self):
        H = Payoff({"u0": 3, "u1": -1, "d0": 2, "d1": 5})
        value = avar_hedged(H, self.tree, 0, HALF)
        self.assertEqual(value.values, RiskNeutralOracle(self.tree)(H).values)

    def test_clamp_warning(self):
        Y = payoffs.insurance(self.tree)
        with self.assertWarns(BandClampWarning):
            value = avar_hedged(Y, self.tree, HALF, HALF)
        self.assertEqual(len(value.notes), 1)

    def test_negative_loading(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with self.assertRaises(InfeasibleBand):
                avar_hedged(payoffs.insurance(self.tree), self.tree, -1, HALF)


class TestCounterexample(unittest.TestCase):
    def test_certified(self):
        result = market_local_counterexample(seed=RANDOM_SEED, trials=100)
        self.assertTrue(result.certified)
        self.assertEqual(result.gap, Rational(1, 6))
        self.assertEqual(result.value.scalar(), Rational(7, 12))
        self.assertEqual(result.value_on_event.scalar(), Rational(1, 4))
        self.assertEqual(result.value_off_event.scalar(), HALF)
        self.assertEqual(result.consistency.status("financial_agreement"), "pass-exhaustive")
        self.assertEqual(result.consistency.status("market_consistency"), "pass-exhaustive")
        self.assertEqual(result.consistency["market_consistency"].trials, 4)
        self.assertEqual(result.consistency.status("market_consistency_search"), "pass-sampled(100)")

        report = result.to_report()
        self.assertTrue(report.passed)
        self.assertIn("strict_local_gap", report)
        self.assertEqual(report["strict_local_gap"].mode, "rational-exact")

    def test_pricing_agreement(self):
        template = canonical_counterexample_template()
        op = CounterexampleEvaluation(template)
        self.assertTrue(pricing_agreement_check(op.densities.members, template.tree).exhaustive)
        # The physical measure gives the up move 1/2 instead of 1/3
        g = partition_for(template.tree, "G")
        result = pricing_agreement_check([Density.unit(g)], template.tree)
        self.assertTrue(result.failed)
        self.assertEqual(result.witness["density"], 0)

    def test_market_local_property_fails(self):
        template = canonical_counterexample_template()
        op = CounterexampleEvaluation(template)
        result = market_local_witness(op, template.tree, lattice=(0, 1))
        self.assertTrue(result.failed)

    def test_equal_densities_have_no_gap(self):
        result = market_local_counterexample(canonical_counterexample_template(1), seed=RANDOM_SEED, trials=50)
        self.assertFalse(result.violation)
        self.assertFalse(result.certified)

    def test_template_validation(self):
        template = canonical_counterexample_template()
        tree = template.tree
        skewed = Payoff({l: 2 if tree.stock_at(l, 1)[0] == 2 else 0 for l in tree.leaves})
        with self.assertRaises(ConstructionFailed):
            CounterexampleTemplate(tree, skewed, template.z2)
        with self.assertRaises(ConstructionFailed):
            CounterexampleTemplate(tree, template.z1 * 3 - 2, template.z2)


class TestLift(unittest.TestCase):
    def setUp(self):
        self.tree = insurance_tree()
        self.op = TwoStepEvaluation(PrincipleSpec.mean_variance(2), self.tree)

    def test_lift_of_two_step_is_the_inner_evaluation(self):
        lifted = lift(self.op, self.tree)
        H = Payoff({"u0": 3, "u1": -1, "d0": 2, "d1": 5})
        self.assertEqual(lifted(H).values, self.op.inner(H).values)

    def test_characteristic_equation(self):
        lifted = lift(self.op, self.tree)
        report = characteristic_check(self.op, lifted, self.tree, seed=RANDOM_SEED)
        self.assertTrue(report.passed)
        self.assertEqual(report.status("characteristic_equation"), "pass-exhaustive")

        report = characteristic_check(self.op, lambda H: lifted(H) + 1, self.tree, seed=RANDOM_SEED)
        self.assertFalse(report.passed)
        self.assertTrue(report["uniqueness"].failed)

    def test_lift_requires_market_local_property(self):
        template = canonical_counterexample_template()
        op = CounterexampleEvaluation(template)
        with self.assertRaises(PreconditionViolated):
            lift(op, template.tree, seed=RANDOM_SEED)

    def test_lift_requires_financial_chain(self):
        with self.assertRaises(PreconditionViolated):
            lift(self.op, self.tree, chain=[partition_for(self.tree, "F:1")])
        with self.assertRaises(PreconditionViolated):
            lift(self.op, self.tree, chain=[partition_for(self.tree, "FS:1"), partition_for(self.tree, "FS:0")])


class TestEssentialSupremum(unittest.TestCase):
    def test_supremum_and_selector(self):
        tree = insurance_tree()
        fs = partition_for(tree, "FS:1")
        a = ConditionalValue(fs, [1, 4])
        b = ConditionalValue(fs, [3, 2])
        supremum, selector = essential_supremum([a, b], return_selector=True)
        self.assertEqual(supremum.values, (Integer(3), Integer(4)))
        self.assertEqual(selector, [1, 0])
        self.assertEqual(concatenate([a, b], selector).values, supremum.values)

    def test_empty_family(self):
        with self.assertRaises(EmptyFamily):
            essential_supremum([])
