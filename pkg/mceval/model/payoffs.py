"""
Builders of payoffs on a scenario tree.
"""

from __future__ import annotations

import random
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Sequence

from sympy import Integer

from mceval.abstract import ParsingError, parse_number
from mceval.numerics import Number

from .errors import InvalidConfig
from .partitions import Partition
from .values import Payoff

if TYPE_CHECKING:
    from .tree import Node, ScenarioTree


def from_table(tree: ScenarioTree, table: Mapping[str, object]) -> Payoff:
    """
    A payoff from a `leaf: value` table. Values may be numbers or text such as `"1/3"`.

    Raises:
        InvalidConfig: if a leaf is missing, unknown, or its value cannot be parsed.
    """
    table = {str(k): v for k, v in table.items()}
    if missing := set(tree.leaves) - table.keys():
        raise InvalidConfig(f"Payoff table has no value for leaves {sorted(missing)}.")
    if extra := table.keys() - set(tree.leaves):
        raise InvalidConfig(f"Payoff table has values for unknown leaves {sorted(extra)}.")
    values = {}
    for leaf in tree.leaves:
        try:
            values[leaf] = parse_number(table[leaf])
        except ParsingError as e:
            raise InvalidConfig(f"Could not parse payoff value of leaf '{leaf}': {e}") from e
    return Payoff(values)


def path_function(tree: ScenarioTree, f: Callable[[tuple[Node, ...]], Number]) -> Payoff:
    """
    The payoff `f(path)` where `path` is the tuple of nodes from the root to the leaf.
    """
    return Payoff({leaf: f(tree.path(leaf)) for leaf in tree.leaves})


def financial(tree: ScenarioTree, f: Callable[[tuple[Number, ...]], Number]) -> Payoff:
    """
    The payoff `f(S_T)` of the terminal stock vector.
    """
    return Payoff({leaf: f(tree.stock_at(leaf, tree.horizon)) for leaf in tree.leaves})


def insurance(tree: ScenarioTree, f: Callable[[Number], Number] = lambda y: y) -> Payoff:
    """
    The payoff `f(Y_T)` of the terminal insurance value, `Y_T` itself by default.
    """
    return Payoff({leaf: f(tree.insurance_at(leaf, tree.horizon)) for leaf in tree.leaves})


def equity_linked(tree: ScenarioTree, f: Callable[[tuple[Number, ...]], Number]) -> Payoff:
    """
    The unit-linked payoff `f(S_T) * Y_T`.
    """
    return financial(tree, f) * insurance(tree)


def indicator(part: Partition, blocks: Iterable[int]) -> Payoff:
    """
    The indicator of the union of the blocks with indices `blocks`.
    """
    event = part.union(blocks)
    return Payoff({leaf: Integer(1) if leaf in event else Integer(0) for leaf in part.leaves})


def random_payoff(leaves: Sequence[str], rng: random.Random, values: Sequence = tuple(range(-2, 3))) -> Payoff:
    """
    A payoff with independent values drawn uniformly from `values`.
    """
    return Payoff({leaf: rng.choice(values) for leaf in leaves})
