"""
Dynamic evaluations on the time grid of a scenario tree.

A dynamic evaluation is a family `(Pi_t)` of evaluations, `Pi_t` conditional on the full
information `F_t` at time `t`. Families are `OracleFamily` objects: `family(t, H)` is a
`ConditionalValue` on the partition of `F_t`. Stopping times are deterministic grid times,
and insurance information arrives at the tree's `reveal_times`.
"""

from __future__ import annotations

import logging
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib.pyplot as plt
import pandas as pd

from mceval import numerics
from mceval.abstract import EvaluationOracle, OracleFamily
from mceval.model.measures import Pricing, path_pricing_density
from mceval.model.partitions import ObservableSpec, Partition, partition_for
from mceval.model.tree import ScenarioTree
from mceval.model.values import ConditionalValue, Density, Payoff, cond_expectation
from mceval.numerics import Number
from mceval.reports import EXACT_MODE, FLOAT_MODE, CheckResult, Report, failure, pass_status, sampled_status
from mceval.search import DEFAULT_EXHAUSTIVE_LIMIT, DEFAULT_LATTICE, NONNEGATIVE_LATTICE, LatticeSearch, default_seed, substream

from .duality import characteristic_check, lift
from .principles import PrincipleSpec
from .sweeps import Sweep, resolve_sweep
from .twostep import is_market_consistent_witness, market_local_witness

logger = logging.getLogger(__name__)

CACHE_SIZE = 256


def full_partition(tree: ScenarioTree, t: int) -> Partition:
    return partition_for(tree, ObservableSpec("F", t))


def node_values_to_conditional(tree: ScenarioTree, t: int, values: Mapping[str, Number]) -> ConditionalValue:
    """
    The conditional value on `F_t` taking, on every block, the value of the node at time `t`
    above it.
    """
    part = full_partition(tree, t)
    return ConditionalValue(part, [values[tree.ancestor(block[0], t).id] for block in part.blocks])


class DynamicEvaluation:
    """
    The values `Pi_t(H)` of one payoff at every grid time.

    The object behaves as the sequence of conditional values indexed by time.

    Attributes:
        tree: the scenario tree.
        node_values: the value at every node, keyed by node id.
        spec: the per-step principle, if any.
    """

    def __init__(self, tree: ScenarioTree, node_values: Mapping[str, Number], spec: PrincipleSpec | None = None, family: OracleFamily | None = None):
        self.tree = tree
        self.node_values = dict(node_values)
        self.spec = spec
        self._family = family

    @cached_property
    def values(self) -> tuple[ConditionalValue, ...]:
        return tuple(node_values_to_conditional(self.tree, t, self.node_values) for t in self.tree.times)

    def __getitem__(self, t: int) -> ConditionalValue:
        return self.values[t]

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def at(self, t: int) -> ConditionalValue:
        return self.values[t]

    @property
    def initial(self) -> Number:
        """
        The value at time 0.
        """
        return self.values[0].scalar()

    def as_family(self) -> OracleFamily:
        """
        The family which produced these values, applicable to other payoffs.
        """
        if self._family is None:
            raise ValueError("This dynamic evaluation was not produced by a family.")
        return self._family

    def to_frame(self) -> pd.DataFrame:
        """
        One row per node: `time`, `node_id`, `value`.
        """
        rows = [
            {"time": t, "node_id": node.id, "value": numerics.to_text(self.node_values[node.id])}
            for t in self.tree.times
            for node in self.tree.nodes_at(t)
        ]
        return pd.DataFrame(rows, columns=["time", "node_id", "value"])

    def path_frame(self) -> pd.DataFrame:
        """
        One row per leaf, one column `t<k>` per time, holding the value along the leaf's path.
        """
        data = {
            leaf: {f"t{t}": numerics.to_text(self.node_values[node.id]) for t, node in enumerate(self.tree.path(leaf))}
            for leaf in self.tree.leaves
        }
        frame = pd.DataFrame.from_dict(data, orient="index")
        frame.index.name = "leaf"
        return frame

    def to_csv(self, path: str | Path, paths: bool = False):
        frame = self.path_frame() if paths else self.to_frame()
        frame.to_csv(path, index=paths)
        logger.info("Wrote dynamic evaluation to %s", path)

    def plot_paths(self, leaves: Iterable[str] | None = None):
        """
        Plot the value against time along the path of each leaf in `leaves` (all leaves by
        default).
        """
        leaves = list(leaves) if leaves is not None else list(self.tree.leaves)
        for leaf in leaves:
            path = self.tree.path(leaf)
            plt.plot(self.tree.times, [numerics.to_float(self.node_values[node.id]) for node in path])
        plt.legend(leaves, loc="best")
        plt.xlabel("time")
        plt.ylabel("value")
        plt.grid()
        plt.show()

    def __repr__(self):
        return f"DynamicEvaluation object: initial value {numerics.to_text(self.values[0][0])}"


class DynamicFamily(OracleFamily):
    """
    The family obtained by sweeping a per-step principle backward through the tree.

    Results are cached per payoff, so that asking for several times of the same payoff runs
    one sweep.
    """

    def __init__(self, spec: PrincipleSpec, tree: ScenarioTree, pricing: Pricing | None = None, sweep: str | type[Sweep] = "recursive"):
        self.spec = spec
        self.tree = tree
        sweep_class = resolve_sweep(sweep) if isinstance(sweep, str) else sweep
        self.sweep = sweep_class(spec, tree, pricing)
        self._cache: dict[tuple, dict[str, Number]] = {}

    def node_values(self, H: Mapping[str, Number]) -> dict[str, Number]:
        key = tuple(numerics.coerce(H[leaf]) for leaf in self.tree.leaves)
        if key not in self._cache:
            if len(self._cache) >= CACHE_SIZE:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = self.sweep.run(H)
        return self._cache[key]

    def evaluate(self, H: Mapping[str, Number]) -> DynamicEvaluation:
        return DynamicEvaluation(self.tree, self.node_values(H), self.spec, self)

    def __call__(self, t: int, H: Mapping[str, Number]) -> ConditionalValue:
        return node_values_to_conditional(self.tree, t, self.node_values(H))

    def partition(self, t: int) -> Partition:
        return full_partition(self.tree, t)

    def __repr__(self):
        return f"DynamicFamily object: {type(self.sweep).__name__} of '{self.spec}'"


def backward_evaluate(
    per_step: PrincipleSpec | str,
    H: Mapping[str, Number],
    tree: ScenarioTree,
    pricing: Pricing | None = None,
    sweep: str = "recursive",
) -> DynamicEvaluation:
    """
    Evaluate `H` at every grid time by the backward recursion of one-period two-step
    evaluations.

    Args:
        per_step: the principle applied over every period, inside each group of children
            sharing a stock value.
        H: the payoff at the horizon.
        tree: the scenario tree.
        pricing: the one-step risk-neutral weights, `one_step_pricing` by default.
        sweep: `"recursive"`, or `"static"` for the non-recursive comparison family.

    Returns:
        DynamicEvaluation: the values, one `ConditionalValue` on `F_t` per time `t`. The
            value at the horizon is `H`.

    Raises:
        IncompleteMarket: if the one-step market at some node is incomplete.
        Arbitrage: if it admits arbitrage.

    Example:
        >>> tree = build_tree(binomial_config(steps=2))
        >>> values = backward_evaluate("mv:alpha=1", payoffs.financial(tree, lambda s: s[0]), tree)
        >>> values.initial
        1
    """
    if isinstance(per_step, str):
        per_step = PrincipleSpec.parse(per_step)
    return DynamicFamily(per_step, tree, pricing, sweep).evaluate(H)


def static_family(spec: PrincipleSpec, tree: ScenarioTree, pricing: Pricing | None = None) -> DynamicFamily:
    """
    The family applying the two-step evaluation of `spec` over the whole remaining horizon
    at every time, without recursion.
    """
    return DynamicFamily(spec, tree, pricing, sweep="static")


class ExpectationFamily(OracleFamily):
    """
    Conditional expectations `E_R[H | F_t]` under one fixed measure `R`, given by a density
    with trivial base (the physical measure by default).
    """

    def __init__(self, tree: ScenarioTree, density: Density | None = None):
        self.tree = tree
        self.density = density or Density.unit(Partition.trivial(tree.leaf_prob))

    def __call__(self, t: int, H: Mapping[str, Number]) -> ConditionalValue:
        part = self.partition(t)
        return cond_expectation(H, part, self.density.rebase(part))

    def partition(self, t: int) -> Partition:
        return full_partition(self.tree, t)


class FamilyOfOracles(OracleFamily):
    """
    A family assembled from one evaluation per time. The evaluation at the horizon defaults to
    the identity.
    """

    def __init__(self, tree: ScenarioTree, oracles: Mapping[int, EvaluationOracle]):
        self.tree = tree
        self.oracles = dict(oracles)
        for t, op in self.oracles.items():
            if op.partition != full_partition(tree, t):
                raise ValueError(f"The evaluation at time {t} is not conditional on F_{t}.")
        if missing := [t for t in tree.times[:-1] if t not in self.oracles]:
            raise ValueError(f"No evaluation given for times {missing}.")

    def __call__(self, t: int, H: Mapping[str, Number]) -> ConditionalValue:
        if t not in self.oracles and t == self.tree.horizon:
            return ConditionalValue.from_payoff(H, self.partition(t))
        return self.oracles[t](Payoff(H))

    def partition(self, t: int) -> Partition:
        return full_partition(self.tree, t)


def _mode(*values: ConditionalValue) -> str:
    exact = all(numerics.is_exact(v) for value in values for v in value.values)
    return EXACT_MODE if exact else FLOAT_MODE


def time_consistency_check(
    family: OracleFamily,
    tree: ScenarioTree,
    pairs: Iterable[tuple[int, int]] | None = None,
    payoffs: Sequence[Mapping[str, Number]] | None = None,
    lattice: Sequence = DEFAULT_LATTICE,
    exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT,
    trials: int = 100,
    seed: int | None = None,
) -> Report:
    """
    Check `Pi_sigma(H) = Pi_sigma(Pi_tau(H))` for every requested pair `sigma < tau`.

    Without explicit `payoffs`, every lattice payoff is tested when there are at most
    `exhaustive_limit` of them, and the row reads `pass-exhaustive`. Otherwise `trials` seeded
    lattice payoffs are tested and the row reads `pass-sampled(trials)`. Values are compared
    exactly in rational mode.

    Args:
        family: the dynamic evaluation.
        tree: the scenario tree.
        pairs: the pairs `(sigma, tau)`, all pairs of grid times by default.
        payoffs: the payoffs tested; the row then reads `pass-sampled(len(payoffs))`.
        lattice: the values of the default payoffs.
        exhaustive_limit: the largest number of payoffs enumerated.
        trials: the number of sampled payoffs otherwise.
        seed: the seed of the sampled payoffs.

    Returns:
        Report: one row `time_consistency[sigma,tau]` per pair.
    """
    seed = default_seed() if seed is None else seed
    if pairs is None:
        pairs = [(s, t) for s in tree.times for t in tree.times if s < t]
    if payoffs is not None:
        payoffs, exhaustive = [Payoff(H) for H in payoffs], False
    else:
        search = LatticeSearch(lattice, exhaustive_limit, trials, seed)
        exhaustive = search.is_exhaustive(len(tree.leaves))
        payoffs = [Payoff(zip(tree.leaves, values)) for (values,) in search.cases(len(tree.leaves))]
    report = Report(title="time consistency", seed=seed)
    for sigma, tau in pairs:
        name = f"time_consistency[{sigma},{tau}]"
        mode, witness = EXACT_MODE, None
        for count, H in enumerate(payoffs, start=1):
            lhs = family(sigma, H)
            rhs = family(sigma, family(tau, H).lift_to_leaves())
            if _mode(lhs, rhs) == FLOAT_MODE:
                mode = FLOAT_MODE
            if bad := lhs.mismatches(rhs):
                witness = {"sigma": sigma, "tau": tau, "H": H.to_record(), "block": bad[0], "lhs": lhs[bad[0]], "rhs": rhs[bad[0]]}
                report.add(failure(name, witness, count, seed, mode=mode))
                break
        if witness is None:
            report.add(CheckResult(name, pass_status(exhaustive, len(payoffs)), len(payoffs), seed=seed, mode=mode))
    logger.info("Checked time consistency on %d pairs with %d payoffs", len(pairs), len(payoffs))
    return report


def segments(tree: ScenarioTree) -> list[tuple[int, int]]:
    """
    For every time `s` before the horizon, the pair `(s, t)` with `t` the next reveal time
    after `s`, or the horizon if no insurance is revealed after `s`.
    """
    out = []
    for s in tree.times[:-1]:
        later = [r for r in sorted(tree.reveal_times) if r > s]
        out.append((s, later[0] if later else tree.horizon))
    return out


def reveal_structure_check(
    family: OracleFamily,
    tree: ScenarioTree,
    pricing: Pricing | None = None,
    payoffs: Sequence[Mapping[str, Number]] | None = None,
    trials: int = 50,
    seed: int | None = None,
) -> Report:
    """
    Check that, between consecutive reveal times, the family is a two-step evaluation.

    For every segment `(s, t)` of `segments(tree)`, the evaluation `Pi_s` is checked for the
    market local property on the events of `F^S_t v F_s`. It is then lifted to that partition
    and the characteristic equation of the lift is checked, which certifies
    `Pi_s(H) = E_Q[Pi_{F^S_t v F_s}(H) | F_s]`.

    Args:
        family: the dynamic evaluation.
        tree: the scenario tree; `reveal_times` may be empty.
        pricing: the one-step risk-neutral weights defining `Q`.
        payoffs: the payoffs of the characteristic equation.
        trials: the number of sampled cases of each search too large to enumerate.
        seed: the sampling seed.

    Returns:
        Report: rows `market_local[s,t]`, `characteristic_equation[s,t]` and
            `uniqueness[s,t]` per segment. When the market local property fails, the other
            two rows of the segment are skipped.
    """
    seed = default_seed() if seed is None else seed
    density = path_pricing_density(tree, pricing)
    report = Report(title="reveal structure", seed=seed)
    for s, t in segments(tree):
        label = f"[{s},{t}]"
        g_part = full_partition(tree, s)
        financial = partition_for(tree, ObservableSpec("FS_tau", t, s))
        op = family.at(s)
        local = market_local_witness(op, tree, g_part, trials=trials, seed=seed, financial=financial, lattice=NONNEGATIVE_LATTICE)
        report.add(local.renamed(f"market_local{label}"))
        if local.failed:
            for name in ("characteristic_equation", "uniqueness"):
                report.add(CheckResult(f"{name}{label}", "skipped", note="market local property fails"))
            continue
        lifted = lift(op, tree, [financial], g_part, measure=density, check=False)
        characteristic = characteristic_check(
            op, lifted, tree, g_part, payoffs=payoffs, measure=density, trials=trials, seed=seed
        )
        for result in characteristic:
            report.add(result.renamed(f"{result.name}{label}"))
    logger.info("Checked reveal structure on %d segments", len(segments(tree)))
    return report


def dynamic_market_consistency_check(
    family: OracleFamily, tree: ScenarioTree, pricing: Pricing | None = None, trials: int = 200, seed: int | None = None
) -> Report:
    """
    Check `Pi_s(H^S + H) = E_Q[H^S | F_s] + Pi_s(H)` at every time `s` before the horizon, for
    payoffs `H^S` measurable with respect to the stock path joined with `F_s`.

    Returns:
        Report: one row `market_consistency[s]` per time.
    """
    seed = default_seed() if seed is None else seed
    density = path_pricing_density(tree, pricing)
    report = Report(title="dynamic market consistency", seed=seed)
    for s in tree.times[:-1]:
        g_part = full_partition(tree, s)
        financial = partition_for(tree, ObservableSpec("FS_tau", tree.horizon, s))
        result = is_market_consistent_witness(
            family.at(s), tree, g_part, trials=trials, seed=seed, financial=financial, measure=density
        )
        report.add(result.renamed(f"market_consistency[{s}]"))
    return report


def monotonicity_check(family: OracleFamily, tree: ScenarioTree, trials: int = 200, seed: int | None = None) -> Report:
    """
    Check `Pi_t(H1) <= Pi_t(H2)` at every time for seeded payoff pairs `H1 <= H2`.

    Returns:
        Report: the row `monotonicity`.
    """
    seed = default_seed() if seed is None else seed
    report = Report(title="dynamic monotonicity", seed=seed)
    mode = EXACT_MODE
    for i in range(trials):
        rng = substream(seed, i)
        H1 = Payoff({leaf: rng.choice(DEFAULT_LATTICE) for leaf in tree.leaves})
        H2 = H1 + Payoff({leaf: rng.choice(NONNEGATIVE_LATTICE) for leaf in tree.leaves})
        for t in tree.times:
            low, high = family(t, H1), family(t, H2)
            if _mode(low, high) == FLOAT_MODE:
                mode = FLOAT_MODE
            if not low.leq(high):
                bad = next(j for j in range(len(low)) if not numerics.leq(low[j], high[j]))
                witness = {"t": t, "H1": H1.to_record(), "H2": H2.to_record(), "block": bad, "low": low[bad], "high": high[bad]}
                report.add(failure("monotonicity", witness, i + 1, seed, mode=mode))
                return report
    report.add(CheckResult("monotonicity", sampled_status(trials), trials, seed=seed, mode=mode))
    return report
