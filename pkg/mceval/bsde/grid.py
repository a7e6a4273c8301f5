"""
Grid models: the time discretization of a market driven by financial Brownian motions, an
insurance Brownian motion and a finite-mark jump process, encoded as a scenario tree.

In every step each Brownian coordinate moves by `+sqrt(h)` or `-sqrt(h)` with probability one
half, and each mark `x` jumps independently with probability `nu(x) h`. Stock `k` is
multiplied by `1 + mu_k h + sigma_k dW^f_k`, and the bond by `1 + r h`.
"""

from __future__ import annotations

import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

from sympy import Integer, Rational

from mceval import numerics
from mceval.abstract import ParsingError, parse_number
from mceval.model.measures import path_pricing_density
from mceval.model.partitions import Partition
from mceval.model.tree import Node, ScenarioTree
from mceval.model.values import Density
from mceval.numerics import Number
from mceval.reports import EXACT_MODE, FLOAT_MODE, CheckResult, Report, failure

from .errors import InvalidParam

logger = logging.getLogger(__name__)

ALLOWED_KEYS = {"h", "steps", "mu", "sigma", "r", "s0", "n_insurance", "marks"}


@dataclass(frozen=True)
class Increment:
    """
    The realized increments of one step: financial and insurance Brownian moves, and one jump
    indicator per mark.
    """

    dWf: tuple[Number, ...]
    dW: tuple[Number, ...]
    dN: tuple[int, ...]

    @property
    def label(self) -> str:
        return (
            "".join("u" if v > 0 else "d" for v in self.dWf)
            + "".join("+" if v > 0 else "-" for v in self.dW)
            + "".join(str(n) for n in self.dN)
        )


def _parse(value, what: str) -> Number:
    try:
        return parse_number(value)
    except ParsingError as e:
        raise InvalidParam(f"Could not parse {what}: {e}") from e


def _vector(value, what: str) -> tuple[Number, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(_parse(v, what) for v in value)
    return (_parse(value, what),)


@dataclass(frozen=True)
class GridModel:
    """
    A discrete-time model on the grid `0, h, ..., steps * h`.

    Attributes:
        h: the step size, in years.
        steps: the number of steps.
        mu: the stock drifts, one per financial Brownian motion.
        sigma: the stock volatilities, one per financial Brownian motion.
        r: the bond rate.
        s0: the initial stock values.
        n_insurance: the number of insurance Brownian motions.
        marks: pairs `(x, nu)` of jump mark and intensity.
    """

    h: Number
    steps: int
    mu: tuple[Number, ...] = (Integer(0),)
    sigma: tuple[Number, ...] = (Integer(1),)
    r: Number = Integer(0)
    s0: tuple[Number, ...] = ()
    n_insurance: int = 1
    marks: tuple[tuple[Number, Number], ...] = ()
    _increments: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "h", _parse(self.h, "h"))
        object.__setattr__(self, "r", _parse(self.r, "r"))
        object.__setattr__(self, "mu", _vector(self.mu, "mu"))
        object.__setattr__(self, "sigma", _vector(self.sigma, "sigma"))
        s0 = self.s0 or tuple(Integer(1) for _ in self.mu)
        object.__setattr__(self, "s0", _vector(s0, "s0"))
        object.__setattr__(self, "marks", tuple((_parse(x, "mark"), _parse(nu, "intensity")) for x, nu in self.marks))
        if not self.h > 0:
            raise InvalidParam(f"Step size must be positive, not {self.h}.")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise InvalidParam(f"Number of steps must be a positive integer, not '{self.steps}'.")
        if not len(self.mu) == len(self.sigma) == len(self.s0) >= 1:
            raise InvalidParam("mu, sigma and s0 must have one entry per financial Brownian motion.")
        if self.n_insurance < 0:
            raise InvalidParam(f"Number of insurance Brownian motions must be nonnegative, not {self.n_insurance}.")
        if any(not s > 0 for s in self.sigma) or any(not s > 0 for s in self.s0):
            raise InvalidParam("Volatilities and initial stock values must be positive.")
        for x, nu in self.marks:
            if not 0 < numerics.mul(nu, self.h) < 1:
                raise InvalidParam(f"Jump probability nu h = {numerics.mul(nu, self.h)} of mark {x} must lie in (0, 1).")
        for k, (theta, mu, sigma) in enumerate(zip(self.theta(), self.mu, self.sigma)):
            if not numerics.to_float(numerics.mul(theta, theta, self.h)) < 1:
                raise InvalidParam(f"Market price of risk {theta} of stock {k} is too large for step size {self.h}.")
            if not numerics.sub(numerics.add(1, numerics.mul(mu, self.h)), numerics.mul(sigma, self.sqrt_h)) > 0:
                raise InvalidParam(f"Stock {k} can reach a nonpositive value in one step.")
        if not numerics.is_exact(self.sqrt_h):
            warnings.warn(f"Step size {self.h} has an irrational square root; the model is evaluated in float mode.")

    @classmethod
    def from_dict(cls, data: Mapping) -> GridModel:
        """
        Raises:
            InvalidParam: if keys are missing or unknown.
        """
        if extra := data.keys() - ALLOWED_KEYS:
            raise InvalidParam(f"Grid model cannot include keys {extra}")
        if missing := {"h", "steps"} - data.keys():
            raise InvalidParam(f"Grid model must include keys {missing}")
        data = dict(data)
        data["marks"] = [tuple(m) if isinstance(m, (list, tuple)) else (m["x"], m["nu"]) for m in data.get("marks", [])]
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> GridModel:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise InvalidParam(f"Grid model file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "h": numerics.to_text(self.h),
            "steps": self.steps,
            "mu": [numerics.to_text(v) for v in self.mu],
            "sigma": [numerics.to_text(v) for v in self.sigma],
            "r": numerics.to_text(self.r),
            "s0": [numerics.to_text(v) for v in self.s0],
            "n_insurance": self.n_insurance,
            "marks": [{"x": numerics.to_text(x), "nu": numerics.to_text(nu)} for x, nu in self.marks],
        }

    @property
    def n_financial(self) -> int:
        return len(self.mu)

    @property
    def sqrt_h(self) -> Number:
        return numerics.sqrt(self.h)

    def theta(self, t: int | None = None, node_id: str | None = None) -> tuple[Number, ...]:
        """
        The market price of risk `(mu - r) / sigma`. The coefficients are constant, so `t` and
        `node_id` do not change the result.
        """
        return tuple(numerics.div(numerics.sub(mu, self.r), sigma) for mu, sigma in zip(self.mu, self.sigma))

    def step_moves(self) -> list[tuple[Increment, Number]]:
        """
        The possible increments of one step with their physical probabilities.
        """
        s = self.sqrt_h
        half = Rational(1, 2)
        moves = []
        brownian = list(itertools.product((s, -s), repeat=self.n_financial + self.n_insurance))
        jumps = list(itertools.product((1, 0), repeat=len(self.marks)))
        for coords in brownian:
            for dN in jumps:
                p = half ** (self.n_financial + self.n_insurance)
                for n, (_, nu) in zip(dN, self.marks):
                    jump = numerics.mul(nu, self.h)
                    p = numerics.mul(p, jump if n else numerics.sub(1, jump))
                increment = Increment(tuple(coords[: self.n_financial]), tuple(coords[self.n_financial :]), dN)
                moves.append((increment, p))
        return moves

    @cached_property
    def tree(self) -> ScenarioTree:
        moves = self.step_moves()
        root = Node("root", None, 0, self.s0, Integer(0))
        nodes, prob = [root], {"root": Integer(1)}
        frontier = [root]
        growth = [numerics.add(1, numerics.mul(mu, self.h)) for mu in self.mu]
        for t in range(1, self.steps + 1):
            next_frontier = []
            for parent in frontier:
                for increment, p in moves:
                    node_id = increment.label if parent.id == "root" else f"{parent.id}.{increment.label}"
                    stock = tuple(
                        numerics.mul(s, numerics.add(g, numerics.mul(sigma, dw)))
                        for s, g, sigma, dw in zip(parent.stock, growth, self.sigma, increment.dWf)
                    )
                    insurance = numerics.add(
                        parent.insurance, *increment.dW, *(numerics.mul(x, n) for (x, _), n in zip(self.marks, increment.dN))
                    )
                    node = Node(node_id, parent.id, t, stock, insurance)
                    nodes.append(node)
                    prob[node_id] = numerics.mul(prob[parent.id], p)
                    self._increments[node_id] = increment
                    next_frontier.append(node)
            frontier = next_frontier
        leaf_prob = {node.id: prob[node.id] for node in frontier}
        reveal = range(1, self.steps + 1) if self.n_insurance or self.marks else ()
        tree = ScenarioTree(nodes, leaf_prob, bond_rate=numerics.mul(self.r, self.h), reveal_times=reveal)
        logger.info("Encoded grid model as a tree with %d leaves", len(tree.leaves))
        return tree

    def build_tree(self) -> ScenarioTree:
        return self.tree

    def increment(self, node_id: str) -> Increment:
        """
        The increments of the step ending at `node_id`.
        """
        self.tree
        return self._increments[node_id]

    def projection_vector(self, node_id: str) -> list[Number]:
        """
        The centred increment coordinates `(dW^f + theta h, dW, dN - nu h)` of the step ending
        at `node_id`. They have mean zero under the risk-neutral measure.
        """
        inc = self.increment(node_id)
        h = self.h
        fin = [numerics.add(dw, numerics.mul(theta, h)) for dw, theta in zip(inc.dWf, self.theta())]
        jumps = [numerics.sub(n, numerics.mul(nu, h)) for n, (_, nu) in zip(inc.dN, self.marks)]
        return fin + list(inc.dW) + jumps

    def pricing_density(self) -> Density:
        """
        The risk-neutral density on the full filtration of the tree.
        """
        return path_pricing_density(self.tree)

    def insurance_key(self, leaf: str) -> tuple:
        """
        The insurance and jump increments along the path of `leaf`.
        """
        return tuple((self.increment(node.id).dW, self.increment(node.id).dN) for node in self.tree.path(leaf)[1:])

    def insurance_partition(self) -> Partition:
        return Partition.by_key(self.tree.leaf_prob, self.insurance_key)

    def law_check(self) -> Report:
        """
        Compare the joint law of the insurance and jump increments under the risk-neutral and
        the physical measure, block by block of the partition they generate.
        """
        tree = self.tree
        q = self.pricing_density()
        part = self.insurance_partition()
        report = Report(title="insurance law")
        mode = EXACT_MODE
        for i, block in enumerate(part.blocks):
            p_mass = part.block_prob(i)
            q_mass = numerics.dot([tree.leaf_prob[l] for l in block], [q[l] for l in block])
            if not numerics.is_exact(q_mass):
                mode = FLOAT_MODE
            if not numerics.close(p_mass, q_mass):
                report.add(failure("insurance_law", {"block": list(block), "P": p_mass, "Q": q_mass}, i + 1, mode=mode))
                return report
        report.add(CheckResult("insurance_law", "pass-exhaustive", len(part), mode=mode))
        return report


def binomial_grid(h, steps: int, mu=0, sigma=1, r=0, n_insurance: int = 1, marks: Sequence = ()) -> GridModel:
    """
    A grid model with one financial Brownian motion.
    """
    return GridModel(h=h, steps=steps, mu=(mu,), sigma=(sigma,), r=r, n_insurance=n_insurance, marks=tuple(marks))
