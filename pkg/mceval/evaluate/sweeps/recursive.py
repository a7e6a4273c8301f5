from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Mapping

from mceval import numerics
from mceval.evaluate.principles import principle_value
from mceval.model.measures import stock_groups
from mceval.model.values import Payoff

from .sweep import Sweep

if TYPE_CHECKING:
    from mceval.model.tree import Node
    from mceval.numerics import Number

logger = logging.getLogger(__name__)


class RecursiveSweep(Sweep):
    """
    The one-period backward recursion `Pi_T = H`,
    `Pi_t = E_Q[ Pi_{F^S_{t+1} v F_t}(Pi_{t+1}) | F_t ]`.

    At a node, the children are grouped by their stock vector. The principle is applied to the
    child values inside every group under the conditional physical probabilities, and the
    group values are averaged with the one-step risk-neutral weights.

    The recursion starts at the first time at which `H` is known, since the principle leaves
    known values unchanged.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._weights: dict[str, dict[tuple, Number]] = {}

    def weights(self, node_id: str) -> dict[tuple, Number]:
        if node_id not in self._weights:
            self._weights[node_id] = self.pricing(self.tree, node_id)
        return self._weights[node_id]

    def start_time(self, H: Mapping[str, Number]) -> int:
        """
        The first time `t` at which `H` is measurable with respect to `F_t`.
        """
        tree = self.tree
        for t in tree.times:
            if all(len({H[leaf] for leaf in tree.leaves_under(node.id)}) == 1 for node in tree.nodes_at(t)):
                return t
        return tree.horizon

    def step(self, node: Node, values: Mapping[str, Number]) -> Number:
        tree = self.tree
        groups = stock_groups(tree, node.id)
        weights = self.weights(node.id)
        inner = []
        for members in groups.values():
            mass = numerics.add(*(tree.prob(m) for m in members))
            probs = [numerics.div(tree.prob(m), mass) for m in members]
            inner.append(principle_value(self.spec, [values[m] for m in members], probs))
        return numerics.dot([weights[stock] for stock in groups], inner)

    def run(self, H: Mapping[str, Number]) -> dict[str, Number]:
        tree = self.tree
        H = Payoff(H)
        start = self.start_time(H)
        values: dict[str, Number] = {}
        for t in range(start, tree.horizon + 1):
            for node in tree.nodes_at(t):
                values[node.id] = H[tree.leaves_under(node.id)[0]]
        for t in range(start - 1, -1, -1):
            for node in tree.nodes_at(t):
                values[node.id] = self.step(node, values)
        logger.debug("Recursive sweep of '%s' from time %d", self.spec, start)
        return values
