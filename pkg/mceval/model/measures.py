"""
Risk-neutral pricing on scenario trees.

The risk-neutral measure lives on the financial sub-filtration: at every block of `F^S_t`
the children are the blocks of `F^S_{t+1}` inside it, and the one-step weights make every
stock coordinate, discounted by the bond, a martingale. The market is required to be complete:
the one-step system must have exactly one solution, and it must be strictly positive.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

from sympy import Integer, Matrix

from mceval import numerics
from mceval.numerics import Number

from .errors import Arbitrage, IncompleteMarket
from .partitions import ObservableSpec, Partition, partition_for
from .values import Density

if TYPE_CHECKING:
    from .tree import ScenarioTree

logger = logging.getLogger(__name__)

Pricing = Callable[["ScenarioTree", str], Mapping[tuple, Number]]


def solve_one_step(parent_stock: Sequence[Number], child_stocks: Sequence[Sequence[Number]], growth: Number, where: str = "") -> list[Number]:
    """
    Solve the one-period martingale system
    `sum_c q_c = 1`, `sum_c q_c S^j_c = growth * S^j` for every stock `j`.

    Args:
        parent_stock: the stock vector at the parent.
        child_stocks: the distinct stock vectors of the children.
        growth: one plus the bond rate of the period.
        where: a label used in error messages.

    Returns:
        list: the branch weights, in the order of `child_stocks`.

    Raises:
        IncompleteMarket: if the system has more than one solution.
        Arbitrage: if it has no solution, or no strictly positive one.
    """
    k = len(child_stocks)
    rows = [[Integer(1)] * k] + [[numerics.coerce(s[j]) for s in child_stocks] for j in range(len(parent_stock))]
    rhs = [Integer(1)] + [numerics.mul(growth, s) for s in parent_stock]
    exact = all(numerics.is_exact(v) for row in rows for v in row) and all(numerics.is_exact(v) for v in rhs)
    if not exact:
        rows = [[float(v) for v in row] for row in rows]
        rhs = [float(v) for v in rhs]
    A, b = Matrix(rows), Matrix(rhs)
    rank = A.rank()
    if rank < k:
        raise IncompleteMarket(
            f"Node {where} has {k} financial branches but the pricing system only has rank {rank}."
        )
    q = (A.T * A).LUsolve(A.T * b)
    q = [numerics.coerce(v) for v in q]
    residual = [numerics.dot(row, q) for row in rows]
    if not all(numerics.close(r, c) for r, c in zip(residual, rhs)):
        raise Arbitrage(f"Node {where}: no measure makes the discounted stock a martingale.")
    if any(not v > 0 for v in q):
        raise Arbitrage(f"Node {where}: the martingale weights {[numerics.to_text(v) for v in q]} are not all positive.")
    return q


def stock_groups(tree: ScenarioTree, node_id: str) -> dict[tuple, list[str]]:
    """
    The children of `node_id` grouped by their stock vector, in child order.
    """
    groups: dict[tuple, list[str]] = {}
    for child in tree.children(node_id):
        groups.setdefault(child.stock, []).append(child.id)
    return groups


def one_step_pricing(tree: ScenarioTree, node_id: str) -> dict[tuple, Number]:
    """
    The risk-neutral weights of the next stock value at `node_id`.

    Returns:
        dict: a map from child stock vector to its risk-neutral probability.
    """
    groups = stock_groups(tree, node_id)
    stocks = list(groups)
    q = solve_one_step(tree.node(node_id).stock, stocks, 1 + tree.bond_rate, where=f"'{node_id}'")
    return dict(zip(stocks, q))


def financial_chain(tree: ScenarioTree) -> list[Partition]:
    """
    The partitions `F^S_t` for `t = g_time, ..., T`.
    """
    return [partition_for(tree, ObservableSpec("FS", t)) for t in range(tree.g_time, tree.horizon + 1)]


def risk_neutral_measure(tree: ScenarioTree) -> Density:
    """
    The unique risk-neutral density on the financial sub-filtration.

    The weight of a leaf is the product, over the periods after `g_time`, of the ratio of
    risk-neutral to physical one-step probabilities of its `F^S` block. The weight is constant
    on `F^S_T` blocks, and has conditional expectation one given `G`.

    Raises:
        IncompleteMarket: if a financial node has more branches than the rank of its pricing system.
        Arbitrage: if a financial node admits no strictly positive martingale weights.
    """
    chain = financial_chain(tree)
    growth = 1 + tree.bond_rate
    weight = {leaf: Integer(1) for leaf in tree.leaves}
    for offset, (parent, child) in enumerate(zip(chain, chain[1:])):
        t = tree.g_time + offset
        parent_of_child = child.coarsening_map(parent)
        for i, block in enumerate(parent.blocks):
            kids = [j for j, p in enumerate(parent_of_child) if p == i]
            stocks = [tree.stock_at(child[j][0], t + 1) for j in kids]
            q = solve_one_step(tree.stock_at(block[0], t), stocks, growth, where=f"at time {t} above leaf '{block[0]}'")
            mass = parent.block_prob(i)
            for j, qj in zip(kids, q):
                ratio = numerics.div(qj, numerics.div(child.block_prob(j), mass))
                for leaf in child[j]:
                    weight[leaf] = numerics.mul(weight[leaf], ratio)
    g_part = partition_for(tree, ObservableSpec("G"))
    logger.debug("Solved risk-neutral measure over %d financial periods", len(chain) - 1)
    return Density(weight, g_part)


def path_pricing_density(tree: ScenarioTree, pricing: Pricing | None = None, base: Partition | None = None) -> Density:
    """
    The pricing density on the full filtration: along each path, the product of the ratios of
    risk-neutral to physical probabilities of the next stock value given the current node.

    Args:
        tree: the scenario tree.
        pricing: a function `(tree, node_id) -> {stock vector: weight}`; `one_step_pricing`
            by default.
        base: the partition the density is normalized on; trivial by default.
    """
    pricing = pricing or one_step_pricing
    node_ratio = {tree.root: Integer(1)}
    for t in tree.times[:-1]:
        for node in tree.nodes_at(t):
            q = pricing(tree, node.id)
            groups = stock_groups(tree, node.id)
            for stock, members in groups.items():
                p_group = numerics.div(numerics.add(*(tree.prob(m) for m in members)), tree.prob(node.id))
                ratio = numerics.div(q[stock], p_group)
                for m in members:
                    node_ratio[m] = numerics.mul(node_ratio[node.id], ratio)
    weight = {leaf: node_ratio[leaf] for leaf in tree.leaves}
    density = Density(weight, Partition.trivial(tree.leaf_prob))
    return density if base is None else density.rebase(base)
