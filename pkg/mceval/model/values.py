from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd
from sympy import Integer

from mceval import numerics
from mceval.numerics import Number, coerce, to_text

from .errors import NotMeasurable, ZeroBlockMass
from .partitions import Partition

logger = logging.getLogger(__name__)


class Payoff(dict):
    """
    A discounted net loss: a `dict` from leaf id to value. Larger values are worse.

    Payoffs support pointwise arithmetic with other payoffs on the same leaves and with
    scalars.
    """

    def __init__(self, values: Mapping[str, Number] | Iterable[tuple[str, Number]] = ()):
        super().__init__((str(leaf), coerce(v)) for leaf, v in dict(values).items())

    @classmethod
    def constant(cls, leaves: Iterable[str], value: Number) -> Payoff:
        return cls({leaf: value for leaf in leaves})

    @classmethod
    def zeros(cls, leaves: Iterable[str]) -> Payoff:
        return cls.constant(leaves, Integer(0))

    @classmethod
    def from_conditional(cls, value: ConditionalValue) -> Payoff:
        return value.lift_to_leaves()

    @classmethod
    def from_blocks(cls, part: Partition, block_values: Sequence[Number]) -> Payoff:
        """
        The `part`-measurable payoff taking `block_values[i]` on block `i`.
        """
        return cls({leaf: block_values[i] for i, block in enumerate(part.blocks) for leaf in block})

    def _combine(self, other, op) -> Payoff:
        if isinstance(other, Mapping):
            if other.keys() != self.keys():
                raise ValueError("Payoffs are defined on different leaves.")
            return Payoff({leaf: op(v, other[leaf]) for leaf, v in self.items()})
        return Payoff({leaf: op(v, other) for leaf, v in self.items()})

    def __add__(self, other) -> Payoff:
        return self._combine(other, numerics.add)

    __radd__ = __add__

    def __sub__(self, other) -> Payoff:
        return self._combine(other, numerics.sub)

    def __rsub__(self, other) -> Payoff:
        return self._combine(other, lambda a, b: numerics.sub(b, a))

    def __mul__(self, other) -> Payoff:
        return self._combine(other, numerics.mul)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Payoff:
        return self._combine(other, numerics.div)

    def __neg__(self) -> Payoff:
        return Payoff({leaf: -v for leaf, v in self.items()})

    def restrict(self, event: Iterable[str]) -> Payoff:
        """
        The payoff `H * I_A` for the event `A = event`.
        """
        event = set(event)
        return Payoff({leaf: v if leaf in event else numerics.mul(0, v) for leaf, v in self.items()})

    def is_measurable(self, part: Partition) -> bool:
        return all(len({self[leaf] for leaf in block}) == 1 for block in part.blocks)

    def leq(self, other: Mapping[str, Number]) -> bool:
        return all(numerics.leq(v, other[leaf]) for leaf, v in self.items())

    def to_record(self) -> dict[str, str]:
        return {leaf: to_text(v) for leaf, v in self.items()}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"leaf": list(self.keys()), "value": [to_text(v) for v in self.values()]})

    def __repr__(self):
        return f"Payoff({self.to_record()})"


class ConditionalValue:
    """
    A value measurable with respect to `partition`: one number per block.

    Attributes:
        partition: the conditioning partition.
        values: the values, indexed by block.
        notes: remarks attached by the operation producing the value.
    """

    def __init__(self, partition: Partition, values: Sequence[Number] | Mapping[int, Number], notes: Iterable[str] = ()):
        if isinstance(values, Mapping):
            values = [values[i] for i in range(len(partition))]
        values = [coerce(v) for v in values]
        if len(values) != len(partition):
            raise ValueError(f"Expected {len(partition)} block values, got {len(values)}.")
        self.partition = partition
        self.values: tuple[Number, ...] = tuple(values)
        self.notes: tuple[str, ...] = tuple(notes)

    @classmethod
    def from_payoff(cls, H: Mapping[str, Number], partition: Partition) -> ConditionalValue:
        """
        View a `partition`-measurable payoff as a conditional value.

        Raises:
            NotMeasurable: if `H` is not constant on a block.
        """
        values = []
        for block in partition.blocks:
            block_values = {H[leaf] for leaf in block}
            if len(block_values) != 1:
                raise NotMeasurable(f"Payoff takes values {block_values} on block {block}.")
            values.append(H[block[0]])
        return cls(partition, values)

    def __getitem__(self, i: int) -> Number:
        return self.values[i]

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def at(self, leaf: str) -> Number:
        return self.values[self.partition.block_of(leaf)]

    def scalar(self) -> Number:
        """
        The single value of a conditional value on a one-block partition.
        """
        if len(self.values) != 1:
            raise ValueError(f"Conditional value has {len(self.values)} blocks, not one.")
        return self.values[0]

    def lift_to_leaves(self) -> Payoff:
        return Payoff({leaf: self.values[i] for i, block in enumerate(self.partition.blocks) for leaf in block})

    def _combine(self, other, op) -> ConditionalValue:
        if isinstance(other, ConditionalValue):
            if other.partition != self.partition:
                raise NotMeasurable("Conditional values live on different partitions.")
            other_values = [other.at(block[0]) for block in self.partition.blocks]
            return ConditionalValue(self.partition, [op(a, b) for a, b in zip(self.values, other_values)])
        return ConditionalValue(self.partition, [op(a, other) for a in self.values])

    def __add__(self, other) -> ConditionalValue:
        return self._combine(other, numerics.add)

    __radd__ = __add__

    def __sub__(self, other) -> ConditionalValue:
        return self._combine(other, numerics.sub)

    def __mul__(self, other) -> ConditionalValue:
        return self._combine(other, numerics.mul)

    __rmul__ = __mul__

    def mismatches(self, other: ConditionalValue) -> list[int]:
        """
        The blocks on which `self` and `other` differ, up to float tolerance.
        """
        if other.partition != self.partition:
            raise NotMeasurable("Conditional values live on different partitions.")
        return [i for i, block in enumerate(self.partition.blocks) if not numerics.close(self.values[i], other.at(block[0]))]

    def close_to(self, other: ConditionalValue) -> bool:
        return not self.mismatches(other)

    def leq(self, other: ConditionalValue) -> bool:
        return all(numerics.leq(v, other.at(block[0])) for v, block in zip(self.values, self.partition.blocks))

    def to_record(self) -> list[str]:
        return [to_text(v) for v in self.values]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "block_id": list(range(len(self.values))),
                "member_leaves": [";".join(block) for block in self.partition.blocks],
                "value": self.to_record(),
            }
        )

    def to_csv(self, path: str | Path):
        self.to_frame().to_csv(path, index=False)
        logger.info("Wrote conditional value with %d blocks to %s", len(self.values), path)

    def __repr__(self):
        return f"ConditionalValue({self.to_record()})"


class Density:
    """
    A weight `xi` on the leaves with conditional expectation one on every block of
    `base_partition`. The weight defines the measure `Q(A | B) = E[xi I_A | B]`.
    """

    def __init__(self, weight: Mapping[str, Number], base_partition: Partition, check: bool = True):
        self.weight = Payoff(weight)
        self.base_partition = base_partition
        if self.weight.keys() != set(base_partition.prob):
            raise ValueError("Density weight must be defined on every leaf.")
        if check:
            for i, block in enumerate(base_partition.blocks):
                mass = numerics.dot(base_partition.conditional_probs(i), [self.weight[leaf] for leaf in block])
                if not numerics.close(mass, 1):
                    raise ValueError(f"Density has conditional mass {mass} on block {block}, not 1.")

    @classmethod
    def unit(cls, part: Partition) -> Density:
        return cls(Payoff.constant(part.prob, Integer(1)), part, check=False)

    @property
    def prob(self) -> Mapping[str, Number]:
        return self.base_partition.prob

    @property
    def nonneg(self) -> bool:
        """
        Whether the density lies in the positive cone, i.e. defines a probability measure.
        """
        return all(numerics.leq(0, v) for v in self.weight.values())

    def __getitem__(self, leaf: str) -> Number:
        return self.weight[leaf]

    def is_measurable(self, part: Partition) -> bool:
        return self.weight.is_measurable(part)

    def rebase(self, part: Partition) -> Density:
        """
        The density `xi / E[xi | part]`, normalized on the blocks of `part`.

        Raises:
            ZeroBlockMass: if a block of `part` has no mass under `xi`.
        """
        weight = {}
        for i, block in enumerate(part.blocks):
            mass = numerics.dot(part.conditional_probs(i), [self.weight[leaf] for leaf in block])
            if mass == 0:
                raise ZeroBlockMass(f"Block {block} has zero mass.")
            for leaf in block:
                weight[leaf] = numerics.div(self.weight[leaf], mass)
        return Density(weight, part, check=False)

    def tilt(self, factor: Mapping[str, Number], part: Partition | None = None) -> Density:
        """
        The density `xi * factor`, rebased on `part` (the base partition by default).
        """
        product = {leaf: numerics.mul(v, factor[leaf]) for leaf, v in self.weight.items()}
        return Density(product, self.base_partition, check=False).rebase(part or self.base_partition)

    def probability(self, event: Iterable[str]) -> ConditionalValue:
        """
        `Q(A | base block)` for the event `A = event`.
        """
        event = set(event)
        indicator = Payoff({leaf: Integer(1) if leaf in event else Integer(0) for leaf in self.prob})
        return cond_expectation(indicator, self.base_partition, self)

    def __repr__(self):
        return f"Density({self.weight.to_record()})"


def cond_expectation(H: Mapping[str, Number], part: Partition, xi: Density | None = None) -> ConditionalValue:
    """
    The conditional expectation of `H` given `part` under the measure defined by `xi`.

    On each block `B` the value is `sum_B P xi H / sum_B P xi`. The computation is exact when
    all inputs are rational.

    Args:
        H: the payoff.
        part: the conditioning partition.
        xi: the density; the physical measure when `None`.

    Raises:
        NotMeasurable: if `part` does not refine the base partition of `xi`.
        ZeroBlockMass: if a block has zero mass under a signed density.
    """
    if xi is not None and not part.refines(xi.base_partition):
        raise NotMeasurable("The conditioning partition must refine the base partition of the density.")
    values = []
    for block in part.blocks:
        masses = [part.prob[leaf] if xi is None else numerics.mul(part.prob[leaf], xi[leaf]) for leaf in block]
        total = numerics.add(*masses)
        if total == 0:
            raise ZeroBlockMass(f"Block {block} has zero mass under the density.")
        values.append(numerics.div(numerics.dot(masses, [H[leaf] for leaf in block]), total))
    return ConditionalValue(part, values)
