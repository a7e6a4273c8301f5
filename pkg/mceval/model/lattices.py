"""
Generators of tree configurations.

Every generator returns a `TreeConfig` listing its nodes with conditional branch probabilities,
so that the result can be written to a file, edited and loaded again. Numbers are written as
text (`"1/2"`), which keeps them exact when the configuration is parsed back.
"""

from __future__ import annotations

import logging
import random
from typing import Mapping, Sequence

from sympy import Integer, Rational

from mceval.abstract import ParsingError, parse_number
from mceval.numerics import Number, to_text

from .errors import InvalidConfig
from .tree import TreeConfig

logger = logging.getLogger(__name__)

STOCK_LABELS = "udmabcefgh"

RANDOM_DOWN = (Rational(1, 2), Rational(2, 3), Rational(3, 4), Rational(4, 5))
RANDOM_UP = (Rational(5, 4), Rational(3, 2), Integer(2))
RANDOM_PROBS = (Rational(1, 4), Rational(1, 3), Rational(1, 2), Rational(2, 3), Rational(3, 4))
RANDOM_INCREMENTS = tuple(Integer(v) for v in (-2, -1, 0, 1, 2))


def _number(value, what: str) -> Number:
    try:
        return parse_number(value)
    except ParsingError as e:
        raise InvalidConfig(f"Could not parse {what}: {e}") from e


def _vector(value, what: str) -> tuple[Number, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(_number(v, what) for v in value)
    return (_number(value, what),)


def _child_id(parent: str, label: str) -> str:
    return label if parent == "root" else parent + label


def _node(node_id, parent, time, stock, insurance, prob=None) -> dict:
    entry = {
        "id": node_id,
        "parent": parent,
        "time": time,
        "stock": [to_text(s) for s in stock],
        "insurance": to_text(insurance),
    }
    if prob is not None:
        entry["prob"] = to_text(prob)
    return entry


def _check_moves(moves, what: str) -> list:
    moves = list(moves)
    if not moves:
        raise InvalidConfig(f"At least one {what} move is required.")
    total = sum((m[1] for m in moves), Integer(0))
    if total != 1:
        raise InvalidConfig(f"Probabilities of the {what} moves sum to {total}, not 1.")
    return moves


def binomial_config(s0=1, up=2, down=Rational(1, 2), p=Rational(1, 2), steps: int = 1, bond_rate=0, g_time: int = 0) -> TreeConfig:
    """
    A binomial tree for one stock without insurance. The stock is multiplied by `up` with
    probability `p` and by `down` otherwise, in each of `steps` periods.

    Nodes are named by their move history (`"u"`, `"ud"`, ...), the root is `"root"`.

    Example:
        ```
        cfg = binomial_config(s0=1, up=2, down="1/2", p="1/2", steps=1)
        tree = build_tree(cfg)    # leaves "u" and "d"
        ```
    """
    return product_config(
        stock_moves=[(up, p), (down, 1 - _number(p, "p"))],
        steps=steps,
        s0=s0,
        bond_rate=bond_rate,
        g_time=g_time,
    )


def product_config(
    stock_moves: Sequence,
    insurance_moves: Sequence = (),
    steps: int = 1,
    reveal_times: Sequence[int] | None = None,
    s0=1,
    y0=0,
    bond_rate=0,
    g_time: int = 0,
) -> TreeConfig:
    """
    A tree in which the stock and the insurance value move independently.

    In every period the stock vector is multiplied componentwise by the factor of one of
    `stock_moves`, and at the reveal times the insurance value is shifted by the increment of
    one of `insurance_moves`. The moves are chosen independently.

    Args:
        stock_moves: pairs `(factor, prob)`. The factor is a number, or a list with one number
            per stock.
        insurance_moves: pairs `(increment, prob)`.
        steps: the number of periods.
        reveal_times: the times at which the insurance branches. Every time `1..steps` when
            insurance moves are given and `reveal_times` is `None`.
        s0: the initial stock value, a number or a list.
        y0: the initial insurance value.
        bond_rate: the bond rate per period.
        g_time: the time whose full information is the initial sigma-algebra.

    Returns:
        TreeConfig: the configuration, with branch probabilities on the nodes.

    Raises:
        InvalidConfig: if move probabilities do not sum to one or dimensions disagree.
    """
    if steps < 1:
        raise InvalidConfig(f"Number of steps must be positive, not '{steps}'.")
    s0 = _vector(s0, "s0")
    stock_moves = _check_moves(
        [(_vector(f, "stock factor"), _number(p, "stock move probability")) for f, p in stock_moves], "stock"
    )
    if any(len(f) != len(s0) for f, _ in stock_moves):
        raise InvalidConfig(f"Stock factors must have {len(s0)} components.")
    if len(stock_moves) > len(STOCK_LABELS):
        raise InvalidConfig(f"At most {len(STOCK_LABELS)} stock moves are supported.")
    insurance_moves = [(_number(x, "insurance increment"), _number(p, "insurance move probability")) for x, p in insurance_moves]
    if insurance_moves:
        _check_moves(insurance_moves, "insurance")
    if reveal_times is None:
        reveal_times = list(range(1, steps + 1)) if insurance_moves else []
    reveal_times = sorted(int(t) for t in reveal_times)

    nodes = [_node("root", None, 0, s0, _number(y0, "y0"))]
    frontier = [nodes[0]]
    for t in range(1, steps + 1):
        branches = [(STOCK_LABELS[i], f, p, None) for i, (f, p) in enumerate(stock_moves)]
        if t in reveal_times and insurance_moves:
            branches = [
                (label + str(j), f, p * q, x)
                for label, f, p, _ in branches
                for j, (x, q) in enumerate(insurance_moves)
            ]
        next_frontier = []
        for parent in frontier:
            stock = [parse_number(s) for s in parent["stock"]]
            y = parse_number(parent["insurance"])
            for label, factor, prob, increment in branches:
                child = _node(
                    _child_id(parent["id"], label),
                    parent["id"],
                    t,
                    [s * f for s, f in zip(stock, factor)],
                    y if increment is None else y + increment,
                    prob,
                )
                nodes.append(child)
                next_frontier.append(child)
        frontier = next_frontier
    logger.debug("Generated product tree with %d nodes", len(nodes))
    return TreeConfig(
        times=list(range(steps + 1)),
        bond_rate=to_text(_number(bond_rate, "bond rate")),
        reveal_times=reveal_times,
        g_time=g_time,
        nodes=nodes,
    )


def random_config(
    seed: int,
    steps: int = 2,
    n_stock_branches: int = 2,
    n_insurance_branches: int = 2,
    reveal_times: Sequence[int] | None = None,
    independent: bool = False,
    bond_rate=0,
    g_time: int = 0,
) -> TreeConfig:
    """
    A seeded random tree with one stock and rational values, complete and free of arbitrage.

    Stock factors are drawn from `RANDOM_DOWN` and `RANDOM_UP`, branch probabilities from
    `RANDOM_PROBS`, and insurance increments from `RANDOM_INCREMENTS`.

    Args:
        seed: the generator seed.
        steps: the number of periods.
        n_stock_branches: `1` (the stock grows at the bond rate) or `2`.
        n_insurance_branches: the number of insurance outcomes at a reveal time.
        reveal_times: the reveal times, the last time by default.
        independent: if `True`, moves are drawn once per period so that the insurance is
            independent of the stock under `P`. Otherwise moves are drawn per node, and the
            insurance law depends on the stock move.
        bond_rate: the bond rate; it must lie strictly between every pair of drawn factors.
        g_time: the time whose full information is the initial sigma-algebra.
    """
    if n_stock_branches not in (1, 2):
        raise InvalidConfig(f"A single stock supports 1 or 2 branches, not {n_stock_branches}.")
    if not 1 <= n_insurance_branches <= len(RANDOM_INCREMENTS):
        raise InvalidConfig(f"Number of insurance branches must lie in 1..{len(RANDOM_INCREMENTS)}.")
    rng = random.Random(seed)
    growth = 1 + _number(bond_rate, "bond rate")
    if not RANDOM_DOWN[-1] < growth < RANDOM_UP[0]:
        raise InvalidConfig(f"Bond rate {bond_rate} is not compatible with the random stock factors.")
    if reveal_times is None:
        reveal_times = [steps]

    def draw_stock():
        if n_stock_branches == 1:
            return [((growth,), Integer(1))]
        p = rng.choice(RANDOM_PROBS)
        return [((rng.choice(RANDOM_UP),), p), ((rng.choice(RANDOM_DOWN),), 1 - p)]

    def draw_insurance():
        increments = rng.sample(RANDOM_INCREMENTS, n_insurance_branches)
        weights = [rng.randint(1, 4) for _ in increments]
        total = sum(weights)
        return [(x, Rational(w, total)) for x, w in zip(increments, weights)]

    per_time = {t: (draw_stock(), draw_insurance()) for t in range(1, steps + 1)}
    nodes = [_node("root", None, 0, (Integer(1),), Integer(0))]
    frontier = [nodes[0]]
    for t in range(1, steps + 1):
        next_frontier = []
        for parent in frontier:
            stock_moves = per_time[t][0] if independent else draw_stock()
            reveal = t in reveal_times and n_insurance_branches > 1
            s = parse_number(parent["stock"][0])
            y = parse_number(parent["insurance"])
            for i, ((factor,), p) in enumerate(stock_moves):
                insurance_moves = [(Integer(0), Integer(1))]
                if reveal:
                    insurance_moves = per_time[t][1] if independent else draw_insurance()
                for j, (x, q) in enumerate(insurance_moves):
                    label = STOCK_LABELS[i] + (str(j) if reveal else "")
                    child = _node(_child_id(parent["id"], label), parent["id"], t, (s * factor,), y + x, p * q)
                    nodes.append(child)
                    next_frontier.append(child)
        frontier = next_frontier
    return TreeConfig(
        times=list(range(steps + 1)),
        bond_rate=to_text(growth - 1),
        reveal_times=sorted(reveal_times),
        g_time=g_time,
        nodes=nodes,
    )


LATTICE_ALIASES = {
    "binomial": binomial_config,
    "product": product_config,
    "random": random_config,
}


def lattice_config(spec: Mapping) -> TreeConfig:
    """
    Expand a `{"kind": ..., **kwargs}` description into a full tree configuration.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in LATTICE_ALIASES:
        raise InvalidConfig(f"Lattice kind '{kind}' is not one of {list(LATTICE_ALIASES)}.")
    try:
        return LATTICE_ALIASES[kind](**spec)
    except TypeError as e:
        raise InvalidConfig(f"Invalid arguments for lattice '{kind}': {e}") from e
