from __future__ import annotations

import logging
from functools import cached_property
from typing import TYPE_CHECKING, Mapping

from mceval.evaluate.principles import evaluate
from mceval.model.measures import path_pricing_density
from mceval.model.partitions import ObservableSpec, partition_for
from mceval.model.values import Density, Payoff, cond_expectation

from .sweep import Sweep

if TYPE_CHECKING:
    from mceval.numerics import Number

logger = logging.getLogger(__name__)


class StaticSweep(Sweep):
    """
    The two-step evaluation over the whole remaining horizon at every time:
    `Pi_t = E_Q[ Pi_{F^S_T v F_t}(H) | F_t ]`.

    warning: Warning
        The values at different times are computed independently and are in general not
        time-consistent. This sweep exists to compare against `RecursiveSweep`.
    """

    @cached_property
    def density(self) -> Density:
        return path_pricing_density(self.tree, self.pricing)

    def run(self, H: Mapping[str, Number]) -> dict[str, Number]:
        tree = self.tree
        H = Payoff(H)
        values: dict[str, Number] = {}
        for t in tree.times:
            part = partition_for(tree, ObservableSpec("F", t))
            inner = evaluate(self.spec, H, partition_for(tree, ObservableSpec("FS_tau", tree.horizon, t)))
            value = cond_expectation(inner.lift_to_leaves(), part, self.density.rebase(part))
            for block, v in zip(part.blocks, value.values):
                values[tree.ancestor(block[0], t).id] = v
        logger.debug("Static sweep of '%s' over %d times", self.spec, len(tree.times))
        return values
