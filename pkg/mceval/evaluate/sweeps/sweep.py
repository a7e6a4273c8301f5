from __future__ import annotations

from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Mapping

from mceval.model.measures import Pricing, one_step_pricing

if TYPE_CHECKING:
    from mceval.evaluate.principles import PrincipleSpec
    from mceval.model.tree import ScenarioTree
    from mceval.numerics import Number


class Sweep(ABC):
    """
    Base class for backward sweeps over a scenario tree. All subclasses must implement a `run`
    method.
    """

    def __init__(self, spec: PrincipleSpec, tree: ScenarioTree, pricing: Pricing | None = None):
        """
        Instantiate a sweep.

        Args:
            spec: the principle applied at every node.
            tree: the scenario tree.
            pricing: a function `(tree, node_id) -> {stock vector: weight}` giving the one-step
                risk-neutral weights; `one_step_pricing` by default.
        """
        self.spec = spec
        self.tree = tree
        self.pricing = pricing or one_step_pricing

    @abstractmethod
    def run(self, H: Mapping[str, Number]) -> dict[str, Number]:
        """
        Return the value of `H` at every node of the tree, keyed by node id.
        """
        pass
