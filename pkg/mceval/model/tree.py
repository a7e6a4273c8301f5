from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import networkx as nx
from sympy import Integer, Rational

from mceval.abstract import ParsingError, parse_number
from mceval.numerics import Number

from .errors import InvalidConfig

logger = logging.getLogger(__name__)


class TreeConfig(dict):
    """
    A dictionary holding the information defining a `ScenarioTree`.

    A configuration either describes the tree node by node:

    ```
    {
        "bond_rate": "0",
        "reveal_times": [2],
        "g_time": 0,
        "nodes": [
            {"id": "r", "parent": null, "time": 0, "stock": ["1"], "insurance": "0"},
            {"id": "u", "parent": "r", "time": 1, "stock": ["2"], "insurance": "0", "prob": "1/2"},
            ...
        ],
        "leaf_prob": {"uu": "1/4", ...}
    }
    ```

    or names a generator from `mceval.model.lattices` with its keyword arguments:

    ```
    {"lattice": {"kind": "binomial", "s0": 1, "up": 2, "down": "1/2", "p": "1/2", "steps": 2}}
    ```

    Leaf probabilities are taken from `"leaf_prob"` when present, and otherwise from the
    conditional branch probabilities `"prob"` of the nodes.
    """

    ALLOWED_KEYS = {"times", "bond_rate", "reveal_times", "g_time", "nodes", "leaf_prob", "lattice"}
    NODE_REQ_KEYS = {"id", "parent"}
    NODE_ALLOWED_KEYS = {"id", "parent", "time", "stock", "insurance", "prob"}

    def __init__(self, data: Mapping | None = None, **kwargs):
        data = dict(data or {}, **kwargs)
        self._check_keys(data)
        super().__init__(data)

    @classmethod
    def from_json(cls, text: str) -> TreeConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"Tree configuration is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise InvalidConfig(f"Tree configuration must be a JSON object, not {type(data).__name__}.")
        return cls(data)

    @classmethod
    def from_file(cls, path: str | Path) -> TreeConfig:
        return cls.from_json(Path(path).read_text())

    def to_json(self) -> str:
        return json.dumps(self, indent=2, default=str)

    def _check_keys(self, data):
        if extra_keys := data.keys() - self.ALLOWED_KEYS:
            raise InvalidConfig(f"Tree configuration cannot include keys {extra_keys}")
        if "lattice" in data:
            if data.keys() - {"lattice"}:
                raise InvalidConfig("A lattice tree configuration cannot include other keys.")
            return
        if "nodes" not in data:
            raise InvalidConfig("Tree configuration must include key 'nodes'")
        for node in data["nodes"]:
            if not isinstance(node, dict):
                raise InvalidConfig(f"Node entry {node} must be an object.")
            if not self.NODE_REQ_KEYS <= node.keys():
                raise InvalidConfig(f"Node {node} must include keys {self.NODE_REQ_KEYS}")
            if extra_keys := node.keys() - self.NODE_ALLOWED_KEYS:
                raise InvalidConfig(f"Node {node['id']} cannot include keys {extra_keys}")

    @property
    def is_lattice(self) -> bool:
        return "lattice" in self


@dataclass(frozen=True)
class Node:
    """
    One node of a scenario tree.
    """

    id: str
    parent: str | None
    time: int
    stock: tuple[Number, ...]
    insurance: Number
    children: tuple[str, ...] = ()


class ScenarioTree:
    """
    A finite filtered probability space given as a tree.

    Every leaf sits at the terminal time `T`. The physical measure `P` is stored as leaf
    probabilities, and each node carries the stock vector and the insurance value observed
    there. The insurance value only changes along edges into one of `reveal_times`. The
    information at time `g_time` defines the initial sigma-algebra `G`.

    All attributes are read-only after construction.
    """

    def __init__(
        self,
        nodes: Iterable[Node],
        leaf_prob: Mapping[str, Number],
        bond_rate: Number = Integer(0),
        reveal_times: Iterable[int] = (),
        g_time: int = 0,
    ):
        self.graph = nx.DiGraph()
        self._nodes: dict[str, Node] = {}
        for node in nodes:
            if node.id in self._nodes:
                raise InvalidConfig(f"Node id '{node.id}' is used twice.")
            self._nodes[node.id] = node
            self.graph.add_node(node.id)
        for node in self._nodes.values():
            if node.parent is not None:
                if node.parent not in self._nodes:
                    raise InvalidConfig(f"Node '{node.id}' has unknown parent '{node.parent}'.")
                self.graph.add_edge(node.parent, node.id)
        if not self._nodes or not nx.is_arborescence(self.graph):
            raise InvalidConfig("Nodes must form a single tree with one root.")
        self.root = next(n for n, d in self.graph.in_degree() if d == 0)
        # Children are kept in the order the nodes were declared
        order = {node_id: i for i, node_id in enumerate(self._nodes)}
        for node_id, node in self._nodes.items():
            children = tuple(sorted(self.graph.successors(node_id), key=order.__getitem__))
            self._nodes[node_id] = Node(node.id, node.parent, node.time, node.stock, node.insurance, children)
        self.leaves = tuple(n for n in self._preorder if not self._nodes[n].children)
        self._leaf_prob = {leaf: leaf_prob.get(leaf) for leaf in self.leaves}
        self.bond_rate = bond_rate
        self.reveal_times = frozenset(reveal_times)
        self.g_time = g_time
        self._validate(leaf_prob)
        logger.debug("Built scenario tree with %d nodes and %d leaves", len(self._nodes), len(self.leaves))

    def _validate(self, leaf_prob):
        root = self._nodes[self.root]
        if root.time != 0:
            raise InvalidConfig(f"Root '{root.id}' must be at time 0, not {root.time}.")
        for node in self._nodes.values():
            if node.parent is not None and node.time != self._nodes[node.parent].time + 1:
                raise InvalidConfig(f"Node '{node.id}' must be one time step after its parent.")
        horizons = {self._nodes[leaf].time for leaf in self.leaves}
        if len(horizons) != 1:
            raise InvalidConfig(f"All leaves must sit at the same terminal time, found times {sorted(horizons)}.")
        self.horizon = horizons.pop()
        if self.horizon < 1:
            raise InvalidConfig("A scenario tree needs at least one period.")
        if extra := set(leaf_prob) - set(self.leaves):
            raise InvalidConfig(f"Leaf probabilities given for nodes {extra} which are not leaves.")
        for leaf, p in self._leaf_prob.items():
            if p is None:
                raise InvalidConfig(f"Leaf '{leaf}' has no probability.")
            if p <= 0:
                raise InvalidConfig(f"Leaf '{leaf}' has nonpositive probability {p}.")
        if sum(self._leaf_prob.values()) != 1:
            raise InvalidConfig(f"Leaf probabilities sum to {sum(self._leaf_prob.values())}, not 1.")
        dims = {len(node.stock) for node in self._nodes.values()}
        if len(dims) != 1:
            raise InvalidConfig(f"Stock vectors must all have the same dimension, found {sorted(dims)}.")
        for node in self._nodes.values():
            if any(s <= 0 for s in node.stock):
                raise InvalidConfig(f"Node '{node.id}' has nonpositive stock value {node.stock}.")
            if node.parent is not None:
                parent = self._nodes[node.parent]
                if node.insurance != parent.insurance and node.time not in self.reveal_times:
                    raise InvalidConfig(
                        f"Insurance changes from {parent.insurance} to {node.insurance} on the edge into "
                        f"'{node.id}' at time {node.time}, which is not a reveal time."
                    )
        if bad := {t for t in self.reveal_times if not 1 <= t <= self.horizon}:
            raise InvalidConfig(f"Reveal times {sorted(bad)} are outside 1..{self.horizon}.")
        if not 0 <= self.g_time < self.horizon:
            raise InvalidConfig(f"g_time {self.g_time} must lie in 0..{self.horizon - 1}.")
        if self.bond_rate <= -1:
            raise InvalidConfig(f"Bond rate {self.bond_rate} must exceed -1.")

    @property
    def times(self) -> tuple[int, ...]:
        return tuple(range(self.horizon + 1))

    @property
    def n_stocks(self) -> int:
        return len(self._nodes[self.root].stock)

    @property
    def leaf_prob(self) -> Mapping[str, Rational]:
        return MappingProxyType(self._leaf_prob)

    @property
    def nodes(self) -> Mapping[str, Node]:
        return MappingProxyType(self._nodes)

    def node(self, node_id: str) -> Node:
        return self._nodes[node_id]

    def children(self, node_id: str) -> tuple[Node, ...]:
        return tuple(self._nodes[c] for c in self._nodes[node_id].children)

    @cached_property
    def _levels(self) -> dict[int, tuple[str, ...]]:
        levels = {t: [] for t in self.times}
        for node_id in self._preorder:
            levels[self._nodes[node_id].time].append(node_id)
        return {t: tuple(ids) for t, ids in levels.items()}

    @cached_property
    def _preorder(self) -> tuple[str, ...]:
        out, stack = [], [self.root]
        while stack:
            node_id = stack.pop()
            out.append(node_id)
            stack.extend(reversed(self._nodes[node_id].children))
        return tuple(out)

    def nodes_at(self, t: int) -> tuple[Node, ...]:
        return tuple(self._nodes[n] for n in self._levels[t])

    @cached_property
    def _paths(self) -> dict[str, tuple[str, ...]]:
        return {leaf: tuple(nx.shortest_path(self.graph, self.root, leaf)) for leaf in self.leaves}

    def path(self, leaf: str) -> tuple[Node, ...]:
        return tuple(self._nodes[n] for n in self._paths[leaf])

    def ancestor(self, leaf: str, t: int) -> Node:
        return self._nodes[self._paths[leaf][t]]

    def stock_at(self, leaf: str, t: int) -> tuple[Number, ...]:
        return self.ancestor(leaf, t).stock

    def insurance_at(self, leaf: str, t: int) -> Number:
        return self.ancestor(leaf, t).insurance

    @cached_property
    def _leaves_under(self) -> dict[str, tuple[str, ...]]:
        under = {node_id: [] for node_id in self._nodes}
        for leaf in self.leaves:
            for node_id in self._paths[leaf]:
                under[node_id].append(leaf)
        return {node_id: tuple(leaves) for node_id, leaves in under.items()}

    def leaves_under(self, node_id: str) -> tuple[str, ...]:
        return self._leaves_under[node_id]

    @cached_property
    def _node_prob(self) -> dict[str, Rational]:
        return {node_id: sum((self._leaf_prob[l] for l in leaves), Integer(0)) for node_id, leaves in self._leaves_under.items()}

    def prob(self, node_id: str) -> Rational:
        """
        The physical probability of reaching `node_id`.
        """
        return self._node_prob[node_id]

    def __repr__(self):
        return (
            f"ScenarioTree object: {len(self._nodes)} nodes, {len(self.leaves)} leaves, "
            f"horizon {self.horizon}, {self.n_stocks} stock(s)"
        )


def _parse(value, what: str) -> Number:
    try:
        return parse_number(value)
    except ParsingError as e:
        raise InvalidConfig(f"Could not parse {what}: {e}") from e


def build_tree(cfg: TreeConfig | Mapping) -> ScenarioTree:
    """
    Build and validate a scenario tree from a configuration.

    Args:
        cfg: a `TreeConfig`, or a mapping accepted by its constructor.

    Returns:
        ScenarioTree: the validated tree.

    Raises:
        InvalidConfig: if the configuration is malformed, probabilities do not sum to one,
            a stock value is nonpositive, or the insurance value changes off a reveal time.
    """
    if not isinstance(cfg, TreeConfig):
        cfg = TreeConfig(cfg)
    if cfg.is_lattice:
        from .lattices import lattice_config

        cfg = lattice_config(cfg["lattice"])
    node_entries = cfg["nodes"]
    by_id = {entry["id"]: entry for entry in node_entries}
    times = {}

    def time_of(node_id, seen=()):
        if node_id in times:
            return times[node_id]
        entry = by_id[node_id]
        if entry["parent"] is None:
            t = 0
        elif entry["parent"] not in by_id or entry["parent"] in seen:
            raise InvalidConfig(f"Node '{node_id}' has an invalid parent '{entry['parent']}'.")
        else:
            t = time_of(entry["parent"], seen + (node_id,)) + 1
        times[node_id] = t
        return t

    nodes, branch_prob = [], {}
    for entry in node_entries:
        node_id = str(entry["id"])
        t = entry.get("time", time_of(entry["id"]))
        stock = entry.get("stock", [])
        if not isinstance(stock, (list, tuple)):
            stock = [stock]
        nodes.append(
            Node(
                id=node_id,
                parent=None if entry["parent"] is None else str(entry["parent"]),
                time=int(t),
                stock=tuple(_parse(s, f"stock of node '{node_id}'") for s in stock),
                insurance=_parse(entry.get("insurance", 0), f"insurance of node '{node_id}'"),
            )
        )
        if "prob" in entry:
            branch_prob[node_id] = _parse(entry["prob"], f"probability of node '{node_id}'")
    if "leaf_prob" in cfg:
        leaf_prob = {str(k): _parse(v, f"probability of leaf '{k}'") for k, v in cfg["leaf_prob"].items()}
    else:
        leaf_prob = _leaf_prob_from_branches(nodes, branch_prob)
    tree = ScenarioTree(
        nodes,
        leaf_prob,
        bond_rate=_parse(cfg.get("bond_rate", 0), "bond rate"),
        reveal_times=[int(t) for t in cfg.get("reveal_times", [])],
        g_time=int(cfg.get("g_time", 0)),
    )
    if "times" in cfg and list(cfg["times"]) != list(tree.times):
        raise InvalidConfig(f"Declared times {cfg['times']} do not match the tree times {list(tree.times)}.")
    return tree


def _leaf_prob_from_branches(nodes: list[Node], branch_prob: dict[str, Number]) -> dict[str, Number]:
    parents = {node.id: node.parent for node in nodes}
    has_children = {node.parent for node in nodes if node.parent is not None}
    leaf_prob = {}
    for node in nodes:
        if node.id in has_children:
            continue
        p, current = Integer(1), node.id
        while parents[current] is not None:
            if current not in branch_prob:
                raise InvalidConfig(f"Node '{current}' has no branch probability and no leaf probabilities are given.")
            p *= branch_prob[current]
            current = parents[current]
        leaf_prob[node.id] = p
    return leaf_prob
