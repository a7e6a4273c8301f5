"""
Dual representations of evaluations.

An evaluation is represented as a supremum over densities, `Pi(H) = sup_xi E[xi H | G] - c(xi)`,
where `c` is a penalty function. This module provides finite and band-shaped density sets,
penalty functions, the hedged Average Value at Risk, a market-consistent evaluation without
the market local property, and the lift of an evaluation given `G` to one given `F^S`.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from sympy import Integer, Rational

from mceval import numerics
from mceval.abstract import EvaluationOracle, as_oracle
from mceval.model.errors import NotMeasurable
from mceval.model.lattices import product_config
from mceval.model.partitions import Partition, financial_partition
from mceval.model.tree import ScenarioTree, build_tree
from mceval.model.values import ConditionalValue, Density, Payoff, cond_expectation
from mceval.numerics import Number
from mceval.reports import EXACT_MODE, FLOAT_MODE, CheckResult, Report, failure, pass_status
from mceval.search import DEFAULT_LATTICE, DEFAULT_TRIALS, LatticeSearch, default_seed, substream

from .errors import (
    BandClampWarning,
    ConstructionFailed,
    EmptyFamily,
    EmptySet,
    InfeasibleBand,
    PreconditionViolated,
)
from .principles import PrincipleOracle, check_level
from .twostep import (
    financial_agreement_witness,
    initial_partition,
    is_market_consistent_witness,
    market_local_witness,
    pricing_measure,
)

logger = logging.getLogger(__name__)

INF = math.inf


def greedy_band(values: Sequence[Number], probs: Sequence[Number], lo: Number, hi: Number | None) -> tuple[Number, list[Number]]:
    """
    Maximize `sum_i p_i z_i v_i` over weights `lo <= z_i <= hi` with `sum_i p_i z_i = 1`.

    Every weight starts at `lo`, and the remaining mass is given to the largest values first,
    up to `hi` each. `hi=None` means no upper bound.

    Returns:
        tuple: the maximal value and the optimal weights, in the order of `values`.
    """
    values = numerics.unify(values)
    weights = [numerics.coerce(lo)] * len(values)
    remaining = numerics.sub(1, numerics.dot(probs, weights))
    order = sorted(range(len(values)), key=lambda i: values[i], reverse=True)
    for i in order:
        if not remaining > 0:
            break
        room = numerics.div(remaining, probs[i])
        add = room if hi is None else numerics.minimum([numerics.sub(hi, lo), room])
        weights[i] = numerics.add(weights[i], add)
        remaining = numerics.sub(remaining, numerics.mul(add, probs[i]))
    return numerics.dot(probs, [numerics.mul(z, v) for z, v in zip(weights, values)]), weights


class DensitySet:
    """
    A set of densities: either a finite list, or a band `lo <= Z <= hi` of densities with
    conditional expectation one on the blocks of `base`, multiplied by an optional `inner`
    density.

    Use `DensitySet.finite` or `DensitySet.band` to build one.
    """

    def __init__(
        self,
        members: Sequence[Density] | None = None,
        lo: Number | None = None,
        hi: Number | None = None,
        base: Partition | None = None,
        inner: Density | None = None,
    ):
        self.members = tuple(members) if members is not None else None
        self.lo = lo
        self.hi = hi
        self.base = base
        self.inner = inner

    @classmethod
    def finite(cls, members: Iterable[Density]) -> DensitySet:
        """
        Raises:
            EmptySet: if `members` is empty.
        """
        members = list(members)
        if not members:
            raise EmptySet("A finite density set needs at least one member.")
        return cls(members=members)

    @classmethod
    def band(cls, lo, hi, base: Partition, inner: Density | None = None) -> DensitySet:
        """
        The set `{inner * Z : lo <= Z <= hi, E[Z | base] = 1}`.

        Raises:
            InfeasibleBand: if `lo < 0`, or no density fits the band (`lo > 1` or `hi < 1`).
        """
        lo = numerics.coerce(lo)
        hi = None if hi is None or hi == INF else numerics.coerce(hi)
        if lo < 0:
            raise InfeasibleBand(f"Band lower bound {lo} is negative.")
        if lo > 1 or (hi is not None and hi < 1):
            raise InfeasibleBand(f"Band [{lo}, {hi}] does not contain the unit density.")
        return cls(lo=lo, hi=hi, base=base, inner=inner)

    @property
    def is_band(self) -> bool:
        return self.members is None

    def contains(self, xi: Density) -> bool:
        """
        Whether `xi` belongs to the set, up to float tolerance.
        """
        if not self.is_band:
            return any(all(numerics.close(xi[l], m[l]) for l in xi.prob) for m in self.members)
        Z = xi.weight
        if self.inner is not None:
            Z = Z / self.inner.weight
        if any(not numerics.leq(self.lo, z) for z in Z.values()):
            return False
        if self.hi is not None and any(not numerics.leq(z, self.hi) for z in Z.values()):
            return False
        mass = cond_expectation(Z, self.base)
        return all(numerics.close(m, 1) for m in mass.values)

    def maximize(self, H: Mapping[str, Number]) -> tuple[ConditionalValue, Payoff]:
        """
        For a band set, the blockwise maximum of `E[Z H | base]` and the maximizing `Z`.
        """
        if not self.is_band:
            raise TypeError("Only band sets are maximized blockwise.")
        values, Z = [], {}
        for i, block in enumerate(self.base.blocks):
            value, weights = greedy_band([H[l] for l in block], self.base.conditional_probs(i), self.lo, self.hi)
            values.append(value)
            Z.update(zip(block, weights))
        return ConditionalValue(self.base, values), Payoff(Z)

    def __repr__(self):
        if self.is_band:
            return f"DensitySet(band [{self.lo}, {self.hi}] on {len(self.base)} blocks)"
        return f"DensitySet({len(self.members)} members)"


class PenaltyFn:
    """
    A penalty function `c(xi)`, the value subtracted from `E[xi H | G]` in a dual
    representation.

    Attributes:
        evaluator: maps a density to a number, a `ConditionalValue`, or `math.inf`.
        closed_form_tag: `"zero"`, `"indicator"` or `"gini"` for the closed forms of this
            module, `None` otherwise.
    """

    def __init__(self, evaluator: Callable[[Density], Number | ConditionalValue], closed_form_tag: str | None = None):
        self.evaluator = evaluator
        self.closed_form_tag = closed_form_tag

    @classmethod
    def zero(cls) -> PenaltyFn:
        return cls(lambda xi: Integer(0), "zero")

    def __call__(self, xi: Density):
        return self.evaluator(xi)

    def __repr__(self):
        return f"PenaltyFn({self.closed_form_tag or 'custom'})"


def gini_penalty(alpha, part: Partition) -> PenaltyFn:
    """
    The relative Gini penalty `E[xi^2 - 1 | part] / (2 alpha)` of the Mean-Variance principle
    with loading `alpha`. For `alpha = 0` it is the indicator of the unit density.
    """
    alpha = numerics.coerce(alpha)

    def evaluator(xi: Density):
        if alpha == 0:
            unit = all(numerics.close(v, 1) for v in xi.weight.values())
            return Integer(0) if unit else INF
        square = Payoff({l: numerics.power(v, 2) for l, v in xi.weight.items()})
        return (cond_expectation(square, part) - 1) * numerics.div(1, 2 * alpha)

    return PenaltyFn(evaluator, "gini")


def indicator_penalty(density_set: DensitySet) -> PenaltyFn:
    """
    The penalty which is zero on `density_set` and infinite outside it.
    """
    return PenaltyFn(lambda xi: Integer(0) if density_set.contains(xi) else INF, "indicator")


def _penalty_values(penalty: PenaltyFn, xi: Density, part: Partition) -> list:
    value = penalty(xi)
    if isinstance(value, ConditionalValue):
        return [value.at(block[0]) for block in part.blocks]
    return [value] * len(part)


def dual_eval(density_set: DensitySet, penalty: PenaltyFn | None, H: Mapping[str, Number], part: Partition) -> ConditionalValue:
    """
    The dual evaluation `sup_xi E[xi H | part] - penalty(xi)` over `density_set`, block by
    block.

    A band set is solved exactly by `greedy_band` on every block of its base partition,
    followed by the expectation under its inner density given `part`. Band sets accept no
    penalty other than zero or their own indicator.

    Raises:
        EmptySet: if a finite set has no members.
        NotMeasurable: if `part` is finer than the base partition of a density.
        ValueError: if a band set is given a nonzero penalty.
    """
    if density_set.is_band:
        if penalty is not None and penalty.closed_form_tag not in ("zero", "indicator"):
            raise ValueError("Band density sets only support a zero penalty.")
        inner_value, _ = density_set.maximize(H)
        if not density_set.base.refines(part):
            raise NotMeasurable("The band base partition must refine the evaluation partition.")
        measure = density_set.inner.rebase(part) if density_set.inner is not None else None
        return cond_expectation(inner_value.lift_to_leaves(), part, measure)
    if not density_set.members:
        raise EmptySet("Cannot evaluate over an empty density set.")
    penalty = penalty or PenaltyFn.zero()
    candidates = []
    for xi in density_set.members:
        expectation = cond_expectation(H, part, xi)
        costs = _penalty_values(penalty, xi, part)
        candidates.append(
            [-INF if c == INF else numerics.sub(e, c) for e, c in zip(expectation.values, costs)]
        )
    values = []
    for column in zip(*candidates):
        finite = [v for v in column if v != -INF]
        values.append(numerics.maximum(finite) if finite else -INF)
    return ConditionalValue(part, values)


def penalty_of(
    op,
    xi: Density,
    grid: Sequence = DEFAULT_LATTICE,
    closed_form: bool = False,
    widen: int = 10,
    trials: int = DEFAULT_TRIALS,
    seed: int | None = None,
) -> Number | ConditionalValue:
    """
    A lower bound on the penalty function of `op` at `xi`,
    `sup_H E[xi H | G] - op(H)` over payoffs with values on `grid`.

    The search is repeated on the grid scaled by `widen`. A block on which the bound is
    positive and grows at least half as fast as the scaling is reported as `math.inf`.

    Args:
        op: the evaluation.
        xi: the density.
        grid: the payoff values per leaf.
        closed_form: use the relative Gini index for a Mean-Variance principle.
        widen: the scaling of the second search.
        trials: the number of sampled payoffs when the grid is too large to enumerate.
        seed: the sampling seed.

    Returns:
        A number when the evaluation partition has one block, a `ConditionalValue` otherwise.
    """
    op = as_oracle(op)
    part = op.partition
    spec = getattr(op, "spec", None)
    if closed_form and spec is not None and spec.kind in ("MeanVariance", "Expectation") and isinstance(op, PrincipleOracle):
        alpha = spec.alpha if spec.kind == "MeanVariance" else Integer(0)
        value = gini_penalty(alpha, part)(xi)
        return value.scalar() if isinstance(value, ConditionalValue) and len(part) == 1 else value

    def search(values) -> list:
        finder = LatticeSearch(values, trials=trials, seed=seed)
        best = [None] * len(part)
        for (h_values,) in finder.cases(len(xi.prob)):
            H = Payoff(dict(zip(xi.prob, h_values)))
            gap = cond_expectation(H, part, xi) - op(H)
            best = [v if b is None else numerics.maximum([b, v]) for b, v in zip(best, gap.values)]
        return best

    narrow = search(tuple(grid))
    wide = search(tuple(numerics.mul(widen, g) for g in grid))
    values = []
    for n, w in zip(narrow, wide):
        grows = n > 0 and numerics.leq(numerics.mul(Rational(widen, 2), n), w)
        values.append(INF if grows else n)
    return values[0] if len(part) == 1 else ConditionalValue(part, values)


def avar_band(delta, level) -> tuple[Number, Number, bool]:
    """
    The hedged AV@R band `[1 - delta (1 + level) / level, 1 + delta (1 - level) / level]`, with
    the lower bound clamped at zero.

    Returns:
        tuple: the lower bound, the upper bound, and whether the lower bound was clamped.

    Raises:
        InvalidLevel: if `level` is not in `(0, 1]`.
        InfeasibleBand: if the band does not contain the unit density.
    """
    level = check_level(level)
    delta = numerics.coerce(delta)
    lo = numerics.sub(1, numerics.div(numerics.mul(delta, 1 + level), level))
    hi = numerics.add(1, numerics.div(numerics.mul(delta, 1 - level), level))
    if lo > 1 or hi < 1:
        raise InfeasibleBand(f"AV@R band [{lo}, {hi}] for delta={delta} does not contain the unit density.")
    clamped = lo < 0
    return (numerics.positive_part(lo), hi, clamped)


def avar_hedged(
    H: Mapping[str, Number], tree: ScenarioTree, delta, level, g_part: Partition | None = None
) -> ConditionalValue:
    """
    The AV@R evaluation combined with hedging:
    `E_Q[ sup_{Z in M'} E[Z H | F^S] | G ]` where `M'` is the band of `avar_band` inside the
    nonnegative densities given `F^S`.

    A negative lower bound is clamped at zero; the clamp emits a `BandClampWarning` and is
    recorded in the notes of the result.

    Raises:
        InvalidLevel: if `level` is not in `(0, 1]`.
        InfeasibleBand: if `delta` is negative.
    """
    lo, hi, clamped = avar_band(delta, level)
    notes = ()
    if clamped:
        message = f"AV@R band lower bound clamped at 0 for delta={delta}, level={level}"
        warnings.warn(message, BandClampWarning)
        logger.warning(message)
        notes = (message,)
    g_part = initial_partition(tree, g_part)
    band = DensitySet.band(lo, hi, financial_partition(tree, g_part), pricing_measure(tree, g_part))
    value = dual_eval(band, None, H, g_part)
    return ConditionalValue(value.partition, value.values, notes=notes)


@dataclass
class CounterexampleTemplate:
    """
    A tree with two insurance-driven densities `z1`, `z2`, each with conditional expectation
    one given `F^S` and independent of the stock.
    """

    tree: ScenarioTree
    z1: Payoff
    z2: Payoff
    g_part: Partition | None = None

    def __post_init__(self):
        self.g_part = initial_partition(self.tree, self.g_part)
        self.financial = financial_partition(self.tree, self.g_part)
        for name, z in (("z1", self.z1), ("z2", self.z2)):
            if any(v < 0 for v in z.values()):
                raise ConstructionFailed(f"Density {name} takes negative values.")
            if not all(numerics.close(v, 1) for v in cond_expectation(z, self.financial).values):
                raise ConstructionFailed(f"Density {name} does not have conditional expectation one given F^S.")
            laws = {
                tuple(sorted(_law(z, self.financial, i).items())) for i in range(len(self.financial))
            }
            if len(laws) != 1:
                raise ConstructionFailed(f"Density {name} is not independent of the stock.")


def _law(z: Payoff, part: Partition, i: int) -> dict:
    law: dict = {}
    for leaf, p in zip(part.blocks[i], part.conditional_probs(i)):
        law[z[leaf]] = law.get(z[leaf], Integer(0)) + p
    return law


def canonical_counterexample_template(z_high=Rational(3, 2)) -> CounterexampleTemplate:
    """
    The one-period template: the stock moves from 1 to 2 or 1/2, and independently one of
    four equally likely insurance values `0, 1, 2, 3` is revealed. The densities are
    `z1 = z_high` for insurance values `0, 1` and `2 - z_high` otherwise, and `z2 = 2 - z1`.
    """
    cfg = product_config(
        stock_moves=[(2, Rational(1, 2)), (Rational(1, 2), Rational(1, 2))],
        insurance_moves=[(y, Rational(1, 4)) for y in range(4)],
        steps=1,
    )
    tree = build_tree(cfg)
    z_high = numerics.coerce(z_high)
    z1 = Payoff({l: z_high if tree.insurance_at(l, 1) < 2 else 2 - z_high for l in tree.leaves})
    return CounterexampleTemplate(tree, z1, 2 - z1)


class CounterexampleEvaluation(EvaluationOracle):
    """
    The coherent evaluation `H -> max_i E[(dQ/dP) z_i H | G]` of a counterexample template.
    It is market-consistent, but violates the market local property when `z1 != z2`.
    """

    def __init__(self, template: CounterexampleTemplate):
        self.template = template
        self.partition = template.g_part
        q = pricing_measure(template.tree, template.g_part)
        self.densities = DensitySet.finite(
            Density(q.weight * z, template.g_part) for z in (template.z1, template.z2)
        )

    def __call__(self, H: Mapping[str, Number]) -> ConditionalValue:
        return dual_eval(self.densities, None, H, self.partition)

    def describe(self) -> str:
        return "max of two F^S-independent densities"


@dataclass
class CounterexampleReport:
    """
    The outcome of `market_local_counterexample`.

    Attributes:
        event: the financial event `A`.
        payoff: the payoff `H`.
        value: `Pi(H)`.
        value_on_event: `Pi(H I_A)`.
        value_off_event: `Pi(H I_{A^c})`.
        gap: `Pi(H I_A) + Pi(H I_{A^c}) - Pi(H)`, on the first block of `G`.
        violation: whether the gap is strictly positive.
        consistency: the market-consistency checks of the evaluation.
    """

    event: frozenset
    payoff: Payoff
    value: ConditionalValue
    value_on_event: ConditionalValue
    value_off_event: ConditionalValue
    gap: Number
    violation: bool
    consistency: Report = field(default_factory=Report)

    @property
    def certified(self) -> bool:
        return self.violation and self.consistency.passed

    def to_report(self) -> Report:
        report = Report(title="market local property counterexample", seed=self.consistency.seed)
        report.extend(self.consistency)
        witness = {
            "A": sorted(self.event),
            "H": self.payoff.to_record(),
            "Pi(H)": self.value.to_record(),
            "Pi(H I_A)": self.value_on_event.to_record(),
            "Pi(H I_Ac)": self.value_off_event.to_record(),
            "gap": self.gap,
        }
        mode = EXACT_MODE if numerics.is_exact(self.gap) else FLOAT_MODE
        status = "pass-exhaustive" if self.violation else "fail"
        report.add(
            CheckResult(
                name="strict_local_gap",
                status=status,
                trials=1,
                witness=witness,
                mode=mode,
                note=f"Pi(H I_A) + Pi(H I_Ac) - Pi(H) = {numerics.to_text(self.gap)}",
            )
        )
        return report


def pricing_agreement_check(densities: Iterable[Density], tree: ScenarioTree, g_part: Partition | None = None) -> CheckResult:
    """
    Check that every density prices every financial event like the risk-neutral measure,
    `E[xi I_B | G] = Q(B | G)` for each block `B` of `F^S`. Financial payoffs are combinations
    of these indicators, so a pass certifies market consistency of `H -> max_xi E[xi H | G]`
    on all financial payoffs.
    """
    g_part = initial_partition(tree, g_part)
    financial = financial_partition(tree, g_part)
    q = pricing_measure(tree, g_part)
    densities = list(densities)
    trials = 0
    for k, xi in enumerate(densities):
        for block in financial.blocks:
            trials += 1
            lhs, rhs = xi.probability(block), q.probability(block)
            if not lhs.close_to(rhs):
                witness = {"density": k, "B": sorted(block), "lhs": lhs.to_record(), "rhs": rhs.to_record()}
                return failure("market_consistency", witness, trials)
    exact = all(numerics.is_exact(v) for xi in densities for v in xi.weight.values())
    return CheckResult("market_consistency", "pass-exhaustive", trials=trials, mode=EXACT_MODE if exact else FLOAT_MODE)


def market_local_counterexample(
    template: CounterexampleTemplate | None = None, seed: int | None = None, trials: int = 500
) -> CounterexampleReport:
    """
    Build a market-consistent coherent evaluation violating the market local property.

    The evaluation is `CounterexampleEvaluation(template)`, the payoff is
    `H = I_A I_{z2 > z1} + I_{A^c} I_{z1 > z2}`, and `A` is the financial event of smallest
    risk-neutral probability for which the gap `Pi(H I_A) + Pi(H I_{A^c}) - Pi(H)` is
    strictly positive. Single atoms are tried first, then larger unions.

    Args:
        template: the template, `canonical_counterexample_template()` by default.
        seed: the seed of the sampled market-consistency search.
        trials: the number of sampled cases of that search.

    Raises:
        ConstructionFailed: if the template densities are not independent of the stock.
    """
    template = template or canonical_counterexample_template()
    seed = default_seed() if seed is None else seed
    tree, op = template.tree, CounterexampleEvaluation(template)
    financial = template.financial
    q = pricing_measure(tree, template.g_part)
    up = {l for l in tree.leaves if template.z2[l] > template.z1[l]}
    down = {l for l in tree.leaves if template.z1[l] > template.z2[l]}
    events = [financial.union(c) for size in range(1, len(financial)) for c in itertools.combinations(range(len(financial)), size)]
    events.sort(key=lambda A: numerics.to_float(q.probability(A).values[0]))
    best = None
    for A in events:
        H = Payoff({l: Integer(1) if (l in A and l in up) or (l not in A and l in down) else Integer(0) for l in tree.leaves})
        value, on, off = op(H), op(H.restrict(A)), op(H.restrict(set(tree.leaves) - A))
        gap = numerics.sub(numerics.add(on[0], off[0]), value[0])
        best = best or (A, H, value, on, off, gap)
        if gap > 0:
            best = (A, H, value, on, off, gap)
            break
    if best is None:
        raise ConstructionFailed("The financial partition has a single block; no event can be chosen.")
    A, H, value, on, off, gap = best
    consistency = Report(title="market consistency", seed=seed)
    consistency.add(financial_agreement_witness(op, tree, template.g_part))
    consistency.add(pricing_agreement_check(op.densities.members, tree, template.g_part))
    search = is_market_consistent_witness(op, tree, template.g_part, trials=trials, seed=seed)
    consistency.add(search.renamed("market_consistency_search"))
    logger.info("Counterexample gap %s on event of %d leaves", numerics.to_text(gap), len(A))
    return CounterexampleReport(A, H, value, on, off, gap, gap > 0, consistency)


class LiftedEvaluation(EvaluationOracle):
    """
    The lift of an evaluation given `G` to an evaluation given a finer financial partition:
    on each block `B`, the value `op(H I_B) / Q(B | G)`, with `0/0 = 0`.

    Attributes:
        chain: the increasing sequence of partitions, each joined with `G`.
        partition: the finest partition of the chain.
    """

    def __init__(self, op: EvaluationOracle, tree: ScenarioTree, chain: Sequence[Partition], g_part: Partition, measure: Density):
        self.op = op
        self.tree = tree
        self.chain = tuple(chain)
        self.g_part = g_part
        self.measure = measure
        self.partition = self.chain[-1]

    def level(self, n: int, H: Mapping[str, Number]) -> ConditionalValue:
        """
        The lift on the `n`-th partition of the chain.
        """
        H = Payoff(H)
        part = self.chain[n]
        values = []
        for block in part.blocks:
            mass = self.measure.probability(block).at(block[0])
            value = self.op(H.restrict(block)).at(block[0])
            if mass == 0:
                values.append(numerics.mul(0, value))
            else:
                values.append(numerics.div(value, mass))
        return ConditionalValue(part, values)

    def __call__(self, H: Mapping[str, Number]) -> ConditionalValue:
        return self.level(len(self.chain) - 1, H)

    def describe(self) -> str:
        return f"lift of {self.op.describe()}"


def lift(
    op,
    tree: ScenarioTree,
    chain: Sequence[Partition] | None = None,
    g_part: Partition | None = None,
    measure: Density | None = None,
    check: bool = True,
    trials: int = 200,
    seed: int | None = None,
) -> LiftedEvaluation:
    """
    Lift the evaluation `op` given `G` to an evaluation given the last partition of `chain`.

    Args:
        op: the evaluation, market-consistent with the market local property.
        tree: the scenario tree.
        chain: an increasing sequence of financial partitions, `[F^S]` by default. Each is
            joined with `G`.
        g_part: the initial information, the partition of `op` by default.
        measure: the pricing density, the risk-neutral measure by default.
        check: verify the chain, and search for a violation of the market local property on
            the finest partition before lifting.
        trials: the number of sampled cases of that search, when it cannot be exhaustive.
        seed: the seed of that search.

    Returns:
        LiftedEvaluation: the lifted evaluation.

    Raises:
        PreconditionViolated: if the chain is not increasing, is not financial, or `op`
            violates the market local property.
    """
    g_part = initial_partition(tree, g_part if g_part is not None else getattr(op, "partition", None))
    op = as_oracle(op, g_part)
    measure = measure.rebase(g_part) if measure is not None else pricing_measure(tree, g_part)
    financial = financial_partition(tree, g_part)
    chain = [part.join(g_part) for part in (chain or [financial])]
    if check:
        for coarse, fine in zip(chain, chain[1:]):
            if not fine.refines(coarse):
                raise PreconditionViolated("Lift partitions must form an increasing sequence.")
        for part in chain:
            if not financial.refines(part):
                raise PreconditionViolated(f"Lift partition {part} is not measurable with respect to F^S.")
        result = market_local_witness(op, tree, g_part, trials=trials, seed=seed, financial=chain[-1])
        if result.failed:
            raise PreconditionViolated(f"Evaluation violates the market local property: {result.witness_blob()}")
    return LiftedEvaluation(op, tree, chain, g_part, measure)


def _sampled_union(part: Partition, rng) -> frozenset[str]:
    return part.union(i for i in range(len(part)) if rng.random() < 0.5)


def characteristic_check(
    op,
    lifted,
    tree: ScenarioTree,
    g_part: Partition | None = None,
    payoffs: Sequence[Mapping[str, Number]] | None = None,
    measure: Density | None = None,
    n_payoffs: int = 3,
    max_exhaustive_blocks: int = 12,
    trials: int = DEFAULT_TRIALS,
    seed: int | None = None,
) -> Report:
    """
    Check the characteristic equation `op(I_A H) = E_Q[I_A lifted(H) | G]` for every union
    `A` of blocks of the lifted partition, and that `lifted(H)` is the unique solution.

    The unique solution takes the value `op(H I_B) / Q(B | G)` on every block `B`, so a
    lifted value differing from it on some block fails the uniqueness row.

    Args:
        op: the evaluation given `G`.
        lifted: the lifted evaluation, any map from payoffs to conditional values.
        tree: the scenario tree.
        g_part: the initial information.
        payoffs: the payoffs to test, seeded lattice payoffs by default.
        measure: the pricing density.
        n_payoffs: the number of default payoffs.
        max_exhaustive_blocks: all unions are enumerated up to this many blocks; beyond it
            `trials` unions are sampled.
        trials: the number of sampled unions.
        seed: the seed of the default payoffs and sampled unions.

    Returns:
        Report: rows `characteristic_equation` and `uniqueness`.
    """
    seed = default_seed() if seed is None else seed
    g_part = initial_partition(tree, g_part if g_part is not None else getattr(op, "partition", None))
    op = as_oracle(op, g_part)
    measure = measure.rebase(g_part) if measure is not None else pricing_measure(tree, g_part)
    if payoffs is None:
        payoffs = []
        for i in range(n_payoffs):
            rng = substream(seed, i)
            payoffs.append(Payoff({l: rng.choice(DEFAULT_LATTICE) for l in tree.leaves}))
    report = Report(title="characteristic equation", seed=seed)
    count, mode, witness = 0, EXACT_MODE, None
    unique_count, unique_witness = 0, None
    exhaustive = True
    for H in payoffs:
        H = Payoff(H)
        L = lifted(H)
        part = L.partition
        k = len(part)
        if k <= max_exhaustive_blocks:
            events = part.unions()
        else:
            exhaustive = False
            events = (_sampled_union(part, substream(seed, len(payoffs) + j)) for j in range(trials))
        for A in events:
            count += 1
            indicator = Payoff({l: Integer(1) if l in A else Integer(0) for l in tree.leaves})
            lhs = op(H.restrict(A))
            rhs = cond_expectation(indicator * L.lift_to_leaves(), g_part, measure)
            if any(not numerics.is_exact(v) for v in lhs.values + rhs.values):
                mode = FLOAT_MODE
            if bad := lhs.mismatches(rhs):
                witness = {"A": sorted(A), "H": H.to_record(), "block": bad[0], "lhs": lhs[bad[0]], "rhs": rhs[bad[0]]}
                break
        for i, block in enumerate(part.blocks):
            unique_count += 1
            mass = measure.probability(block).at(block[0])
            implied = numerics.div(op(H.restrict(block)).at(block[0]), mass) if mass != 0 else Integer(0)
            if not numerics.close(implied, L[i]):
                unique_witness = {"H": H.to_record(), "block": list(block), "lifted": L[i], "implied": implied}
                break
        if witness or unique_witness:
            break
    if witness:
        report.add(failure("characteristic_equation", witness, count, seed, mode=mode))
    else:
        report.add(CheckResult("characteristic_equation", pass_status(exhaustive, count), count, seed=None if exhaustive else seed, mode=mode))
    if unique_witness:
        report.add(failure("uniqueness", unique_witness, unique_count, seed, mode=mode))
    else:
        report.add(CheckResult("uniqueness", "pass-exhaustive", unique_count, mode=mode))
    return report


def essential_supremum(family: Sequence[ConditionalValue], return_selector: bool = False):
    """
    The blockwise maximum of a finite family of conditional values.

    Args:
        family: conditional values on a common partition.
        return_selector: also return, for every block, the index of the first member
            attaining the maximum. Pasting the members along the selector with `concatenate`
            reproduces the supremum.

    Raises:
        EmptyFamily: if `family` is empty.
        NotMeasurable: if the members live on different partitions.
    """
    family = list(family)
    if not family:
        raise EmptyFamily("The essential supremum of an empty family is not defined.")
    part = family[0].partition
    if any(member.partition != part for member in family):
        raise NotMeasurable("Family members live on different partitions.")
    columns = [[member.at(block[0]) for member in family] for block in part.blocks]
    values, selector = [], []
    for column in columns:
        best = numerics.maximum(column)
        values.append(best)
        selector.append(next(j for j, v in enumerate(column) if numerics.close(v, best)))
    supremum = ConditionalValue(part, values)
    return (supremum, selector) if return_selector else supremum


def concatenate(values: Sequence[ConditionalValue], selector: Sequence[int]) -> ConditionalValue:
    """
    The conditional value equal to `values[selector[i]]` on block `i`.
    """
    if not values:
        raise EmptyFamily("Nothing to concatenate.")
    part = values[0].partition
    if len(selector) != len(part):
        raise ValueError(f"Selector has {len(selector)} entries for {len(part)} blocks.")
    return ConditionalValue(part, [values[j].at(block[0]) for j, block in zip(selector, part.blocks)])
