"""
Two-step market evaluations.

A two-step evaluation first applies a conditional principle given the financial information
`F^S` (the terminal stock path joined with the initial information `G`), and then takes the
risk-neutral expectation of the result given `G`. Financial payoffs are therefore priced by
the market, and only the non-hedgeable part of a payoff carries a loading.
"""

from __future__ import annotations

import logging
from typing import Mapping

import numpy as np
from scipy.optimize import linprog

from mceval import numerics
from mceval.abstract import EvaluationOracle, as_oracle
from mceval.model.errors import NotMeasurable
from mceval.model.measures import financial_chain, risk_neutral_measure
from mceval.model.partitions import ObservableSpec, Partition, financial_partition, partition_for
from mceval.model.tree import ScenarioTree
from mceval.model.values import ConditionalValue, Density, Payoff, cond_expectation
from mceval.numerics import Number
from mceval.reports import EXACT_MODE, FLOAT_MODE, WitnessReport, pass_status
from mceval.search import DEFAULT_EXHAUSTIVE_LIMIT, DEFAULT_LATTICE, DEFAULT_TRIALS, NONNEGATIVE_LATTICE, LatticeSearch

from .errors import NonpositiveNumeraire
from .principles import PrincipleSpec, evaluate

logger = logging.getLogger(__name__)


def initial_partition(tree: ScenarioTree, g_part: Partition | None = None) -> Partition:
    return g_part if g_part is not None else partition_for(tree, ObservableSpec("G"))


def pricing_measure(tree: ScenarioTree, g_part: Partition | None = None) -> Density:
    """
    The risk-neutral density, normalized on the blocks of `g_part`.
    """
    return risk_neutral_measure(tree).rebase(initial_partition(tree, g_part))


class RiskNeutralOracle(EvaluationOracle):
    """
    The linear evaluation `H -> E_Q[H | G]`.
    """

    def __init__(self, tree: ScenarioTree, g_part: Partition | None = None, measure: Density | None = None):
        self.tree = tree
        self.partition = initial_partition(tree, g_part)
        self.measure = measure.rebase(self.partition) if measure is not None else pricing_measure(tree, self.partition)

    def __call__(self, H: Mapping[str, Number]) -> ConditionalValue:
        return cond_expectation(H, self.partition, self.measure)

    def describe(self) -> str:
        return "E_Q"


class TwoStepEvaluation(EvaluationOracle):
    """
    The two-step market evaluation `H -> E_Q[ evaluate(spec, H, F^S) | G ]`.

    Args:
        spec: the inner principle, or its text.
        tree: the scenario tree.
        g_part: the initial information, the tree's `G` by default.

    Raises:
        IncompleteMarket: if the financial market of `tree` is not complete.
        Arbitrage: if it admits arbitrage.
    """

    def __init__(self, spec: PrincipleSpec | str, tree: ScenarioTree, g_part: Partition | None = None):
        self.spec = PrincipleSpec.parse(spec) if isinstance(spec, str) else spec
        self.tree = tree
        self.partition = initial_partition(tree, g_part)
        self.financial = financial_partition(tree, self.partition)
        self.measure = pricing_measure(tree, self.partition)

    def inner(self, H: Mapping[str, Number]) -> ConditionalValue:
        """
        The inner evaluation given `F^S`.
        """
        return evaluate(self.spec, H, self.financial)

    def __call__(self, H: Mapping[str, Number]) -> ConditionalValue:
        return cond_expectation(self.inner(H).lift_to_leaves(), self.partition, self.measure)

    def describe(self) -> str:
        return f"two-step {self.spec.to_text()}"


def two_step(spec: PrincipleSpec | str, H: Mapping[str, Number], tree: ScenarioTree, g_part: Partition | None = None) -> ConditionalValue:
    """
    The two-step market evaluation of `H`: the inner principle `spec` given `F^S`, followed by
    the risk-neutral expectation given `G`.

    Example:
        On a tree without financial risk this is `evaluate(spec, H, G)`, and for a payoff
        depending on the stock only it is `E_Q[H | G]` whatever the principle.
    """
    return TwoStepEvaluation(spec, tree, g_part)(H)


def discounted_stock(tree: ScenarioTree, leaf: str, t: int, i: int) -> Number:
    growth = numerics.power(1 + tree.bond_rate, t)
    return numerics.div(tree.stock_at(leaf, t)[i], growth)


class NumeraireEvaluation(EvaluationOracle):
    """
    The two-step evaluation expressed in units of the discounted stock `i`.

    Payoffs are measured in units of the stock at maturity. The pricing measure is
    `dQ_i/dP = (S^i_T / S^i_g) dQ/dP` and the inner evaluation is the inner principle applied
    to `S^i_T H` and divided by `S^i_T`.
    """

    def __init__(self, spec: PrincipleSpec, tree: ScenarioTree, i: int, g_part: Partition | None = None):
        if not 0 <= i < tree.n_stocks:
            raise NonpositiveNumeraire(f"Tree has no stock with index {i}.")
        self.base = TwoStepEvaluation(spec, tree, g_part)
        self.tree = tree
        self.index = i
        self.partition = self.base.partition
        self.terminal = Payoff({leaf: discounted_stock(tree, leaf, tree.horizon, i) for leaf in tree.leaves})
        if any(v <= 0 for v in self.terminal.values()):
            raise NonpositiveNumeraire(f"Stock {i} is not strictly positive at maturity.")
        self.initial = Payoff({leaf: discounted_stock(tree, leaf, tree.g_time, i) for leaf in tree.leaves})
        if not self.initial.is_measurable(self.partition):
            raise NotMeasurable(f"Stock {i} at time {tree.g_time} is not measurable with respect to G.")
        self.measure = self.base.measure.tilt(self.terminal, self.partition)

    def inner(self, H: Mapping[str, Number]) -> ConditionalValue:
        scaled = self.base.inner(Payoff(H) * self.terminal)
        return ConditionalValue(
            scaled.partition,
            [numerics.div(v, self.terminal[block[0]]) for v, block in zip(scaled.values, scaled.partition.blocks)],
        )

    def __call__(self, H: Mapping[str, Number]) -> ConditionalValue:
        return cond_expectation(self.inner(H).lift_to_leaves(), self.partition, self.measure)

    def describe(self) -> str:
        return f"{self.base.describe()} in units of stock {self.index}"


def numeraire_transform(
    i: int | str, H: Mapping[str, Number], tree: ScenarioTree, spec: PrincipleSpec, g_part: Partition | None = None
) -> ConditionalValue:
    """
    Evaluate `H` through the change of numeraire to the discounted stock `i`.

    The result is `S^i_g * Pi_i(H / S^i_T)`, where `Pi_i` is the evaluation in stock units of
    `NumeraireEvaluation`. It agrees with `two_step(spec, H, tree, g_part)`.

    Args:
        i: the stock index, or `"bond"` for the deterministic numeraire.
        H: the payoff, in discounted units.
        tree: the scenario tree.
        spec: the inner principle, or its text.
        g_part: the initial information.

    Raises:
        NonpositiveNumeraire: if the stock is not strictly positive, or there is no stock `i`.
    """
    if i == "bond":
        return two_step(spec, H, tree, g_part)
    oracle = NumeraireEvaluation(spec, tree, int(i), g_part)
    value = oracle(Payoff(H) / oracle.terminal)
    return ConditionalValue(
        value.partition,
        [numerics.mul(oracle.initial[block[0]], v) for v, block in zip(value.values, value.partition.blocks)],
        notes=(f"numeraire: stock {i}",),
    )


def _mode(*values: ConditionalValue) -> str:
    exact = all(numerics.is_exact(v) for value in values for v in value.values)
    return EXACT_MODE if exact else FLOAT_MODE


def witness_result(
    name: str, search: LatticeSearch, exhaustive: bool, trials: int, mode: str, witness: dict | None = None
) -> WitnessReport:
    if witness is not None:
        logger.info("Found a witness against '%s' after %d cases", name, trials)
        return WitnessReport(name=name, status="fail", trials=trials, witness=witness, seed=search.seed, mode=mode)
    return WitnessReport(
        name=name,
        status=pass_status(exhaustive, trials),
        trials=trials,
        seed=None if exhaustive else search.seed,
        mode=mode,
    )


def is_market_consistent_witness(
    op,
    tree: ScenarioTree,
    g_part: Partition | None = None,
    trials: int = DEFAULT_TRIALS,
    seed: int | None = None,
    financial: Partition | None = None,
    measure: Density | None = None,
    lattice=DEFAULT_LATTICE,
    exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT,
) -> WitnessReport:
    """
    Search for a violation of market consistency,
    `op(H^S + H) = E_Q[H^S | G] + op(H)` for financial `H^S`.

    Payoffs take values on `lattice`: `H^S` one value per block of `financial`, and `H` one
    value per leaf. All combinations are visited when there are at most `exhaustive_limit`;
    otherwise `trials` seeded combinations are drawn.

    Args:
        op: the evaluation, an `EvaluationOracle` or a callable on the partition `g_part`.
        tree: the scenario tree.
        g_part: the initial information.
        trials: the number of sampled cases.
        seed: the sampling seed, `MCEVAL_SEED` or 42 by default.
        financial: the partition of financial payoffs, `F^S` by default.
        measure: the pricing density, the risk-neutral measure by default.
        lattice: the payoff values.
        exhaustive_limit: the largest number of cases visited exhaustively.

    Returns:
        WitnessReport: a pass, or a failure whose witness holds `H_S`, `H` and the block where
            the two sides differ.
    """
    g_part = initial_partition(tree, g_part if g_part is not None else getattr(op, "partition", None))
    op = as_oracle(op, g_part)
    financial = financial or financial_partition(tree, g_part)
    measure = measure.rebase(g_part) if measure is not None else pricing_measure(tree, g_part)
    search = LatticeSearch(lattice, exhaustive_limit, trials, seed)
    leaves = tree.leaves
    count, mode = 0, EXACT_MODE
    groups = (len(financial), len(leaves))
    exhaustive = search.is_exhaustive(*groups)
    for hs_values, h_values in search.cases(*groups):
        count += 1
        HS = Payoff.from_blocks(financial, hs_values)
        H = Payoff(dict(zip(leaves, h_values)))
        lhs = op(HS + H)
        rhs = cond_expectation(HS, g_part, measure) + op(H)
        if _mode(lhs, rhs) == FLOAT_MODE:
            mode = FLOAT_MODE
        if bad := lhs.mismatches(rhs):
            witness = {"H_S": HS.to_record(), "H": H.to_record(), "block": bad[0], "lhs": lhs[bad[0]], "rhs": rhs[bad[0]]}
            return witness_result("market_consistency", search, exhaustive, count, mode, witness)
    return witness_result("market_consistency", search, exhaustive, count, mode)


def financial_agreement_witness(
    op,
    tree: ScenarioTree,
    g_part: Partition | None = None,
    trials: int = DEFAULT_TRIALS,
    seed: int | None = None,
    financial: Partition | None = None,
    measure: Density | None = None,
    lattice=DEFAULT_LATTICE,
    exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT,
) -> WitnessReport:
    """
    Search for a financial payoff `H^S` with `op(H^S) != E_Q[H^S | G]`.

    For normalized, cash-invariant evaluations this property is equivalent to market
    consistency.
    """
    g_part = initial_partition(tree, g_part if g_part is not None else getattr(op, "partition", None))
    op = as_oracle(op, g_part)
    financial = financial or financial_partition(tree, g_part)
    measure = measure.rebase(g_part) if measure is not None else pricing_measure(tree, g_part)
    search = LatticeSearch(lattice, exhaustive_limit, trials, seed)
    count, mode = 0, EXACT_MODE
    groups = (len(financial),)
    exhaustive = search.is_exhaustive(*groups)
    for (hs_values,) in search.cases(*groups):
        count += 1
        HS = Payoff.from_blocks(financial, hs_values)
        lhs, rhs = op(HS), cond_expectation(HS, g_part, measure)
        if _mode(lhs, rhs) == FLOAT_MODE:
            mode = FLOAT_MODE
        if bad := lhs.mismatches(rhs):
            witness = {"H_S": HS.to_record(), "block": bad[0], "lhs": lhs[bad[0]], "rhs": rhs[bad[0]]}
            return witness_result("financial_agreement", search, exhaustive, count, mode, witness)
    return witness_result("financial_agreement", search, exhaustive, count, mode)


def market_local_witness(
    op,
    tree: ScenarioTree,
    g_part: Partition | None = None,
    trials: int = DEFAULT_TRIALS,
    seed: int | None = None,
    financial: Partition | None = None,
    lattice=NONNEGATIVE_LATTICE,
    exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT,
) -> WitnessReport:
    """
    Search for a violation of the market local property,
    `op(H) = op(I_A H) + op(I_{A^c} H)` for nonnegative `H` and financial events `A`.
    """
    g_part = initial_partition(tree, g_part if g_part is not None else getattr(op, "partition", None))
    op = as_oracle(op, g_part)
    financial = financial or financial_partition(tree, g_part)
    search = LatticeSearch(lattice, exhaustive_limit, trials, seed)
    leaves = tree.leaves
    count, mode = 0, EXACT_MODE
    groups = ((len(financial), (0, 1)), len(leaves))
    exhaustive = search.is_exhaustive(*groups)
    for selector, h_values in search.cases(*groups):
        count += 1
        event = financial.union(i for i, chosen in enumerate(selector) if chosen)
        H = Payoff(dict(zip(leaves, h_values)))
        lhs = op(H)
        rhs = op(H.restrict(event)) + op(H.restrict(set(leaves) - event))
        if _mode(lhs, rhs) == FLOAT_MODE:
            mode = FLOAT_MODE
        if bad := lhs.mismatches(rhs):
            witness = {"A": sorted(event), "H": H.to_record(), "block": bad[0], "lhs": lhs[bad[0]], "rhs": rhs[bad[0]]}
            return witness_result("market_local", search, exhaustive, count, mode, witness)
    return witness_result("market_local", search, exhaustive, count, mode)


def _blockwise_extreme(H: Mapping[str, Number], part: Partition, pick) -> Payoff:
    return Payoff({leaf: pick([H[l] for l in block]) for block in part.blocks for leaf in block})


def super_replication(H: Mapping[str, Number], tree: ScenarioTree, g_part: Partition | None = None) -> ConditionalValue:
    """
    The super-replication price `E_Q[ max_{F^S block} H | G ]`, the largest value of `H` over
    all martingale measures.
    """
    g_part = initial_partition(tree, g_part)
    worst = _blockwise_extreme(H, financial_partition(tree, g_part), numerics.maximum)
    return cond_expectation(worst, g_part, pricing_measure(tree, g_part))


def sub_replication(H: Mapping[str, Number], tree: ScenarioTree, g_part: Partition | None = None) -> ConditionalValue:
    """
    The sub-replication price `E_Q[ min_{F^S block} H | G ]`.
    """
    g_part = initial_partition(tree, g_part)
    best = _blockwise_extreme(H, financial_partition(tree, g_part), numerics.minimum)
    return cond_expectation(best, g_part, pricing_measure(tree, g_part))


def martingale_bounds(
    H: Mapping[str, Number], tree: ScenarioTree, g_part: Partition | None = None, filtration: str = "financial"
) -> tuple[ConditionalValue, ConditionalValue]:
    """
    The smallest and largest expectations of `H` over all measures under which the discounted
    stock is a martingale, computed as linear programs on each block of `g_part`.

    Args:
        H: the payoff.
        tree: the scenario tree.
        g_part: the initial information.
        filtration: `"financial"` for martingales with respect to `F^S_t`, or `"full"` for
            martingales with respect to the full tree filtration. On the financial filtration
            the bounds are the sub- and super-replication prices.

    Returns:
        tuple: the lower and upper bound, as float conditional values on `g_part`.
    """
    g_part = initial_partition(tree, g_part)
    if filtration == "financial":
        chain = financial_chain(tree)
    elif filtration == "full":
        chain = [partition_for(tree, ObservableSpec("F", t)) for t in range(tree.g_time, tree.horizon + 1)]
    else:
        raise ValueError(f"Filtration must be 'financial' or 'full', not '{filtration}'.")
    lower, upper = [], []
    for block in g_part.blocks:
        index = {leaf: k for k, leaf in enumerate(block)}
        rows = []
        for offset, part in enumerate(chain[:-1]):
            t = tree.g_time + offset
            for node_block in part.blocks:
                if node_block[0] not in index:
                    continue
                for j in range(tree.n_stocks):
                    row = np.zeros(len(block))
                    for leaf in node_block:
                        row[index[leaf]] = float(
                            numerics.sub(discounted_stock(tree, leaf, t + 1, j), discounted_stock(tree, leaf, t, j))
                        )
                    rows.append(row)
        rows.append(np.ones(len(block)))
        A_eq = np.vstack(rows)
        b_eq = np.zeros(len(rows))
        b_eq[-1] = 1.0
        c = np.array([float(H[leaf]) for leaf in block])
        low = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        high = linprog(-c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if not (low.success and high.success):
            raise RuntimeError(f"Martingale bound program failed on block {block}: {low.message} / {high.message}")
        lower.append(float(low.fun))
        upper.append(float(-high.fun))
    logger.debug("Solved %d pairs of martingale bound programs", len(g_part))
    return ConditionalValue(g_part, lower), ConditionalValue(g_part, upper)
