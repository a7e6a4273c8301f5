from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Hashable, Iterable, Iterator, Mapping

from sympy import Integer, Rational

from .errors import NotMeasurable, UnknownTime

if TYPE_CHECKING:
    from .tree import ScenarioTree

logger = logging.getLogger(__name__)


class Partition:
    """
    A sigma-algebra on the leaves of a scenario tree, given by its atoms.

    Blocks are ordered by their first leaf in the leaf order of `prob`, and the leaves inside a
    block keep that order. The physical measure `prob` travels with the partition so that
    conditional quantities can be computed from a partition alone.
    """

    def __init__(self, blocks: Iterable[Iterable[str]], prob: Mapping[str, Rational], time_tag: int | None = None):
        order = {leaf: i for i, leaf in enumerate(prob)}
        blocks = [sorted(set(block), key=order.get) for block in blocks]
        blocks = [block for block in blocks if block]
        seen = set()
        for block in blocks:
            for leaf in block:
                if leaf not in order:
                    raise ValueError(f"Leaf '{leaf}' is not a leaf of the underlying space.")
                if leaf in seen:
                    raise ValueError(f"Leaf '{leaf}' lies in two blocks.")
                seen.add(leaf)
        if missing := set(order) - seen:
            raise ValueError(f"Blocks do not cover the leaves {sorted(missing, key=order.get)}.")
        blocks.sort(key=lambda block: order[block[0]])
        self.blocks: tuple[tuple[str, ...], ...] = tuple(tuple(block) for block in blocks)
        self.prob = prob
        self.time_tag = time_tag
        self._index = {leaf: i for i, block in enumerate(self.blocks) for leaf in block}

    @classmethod
    def trivial(cls, prob: Mapping[str, Rational], time_tag: int | None = None) -> Partition:
        return cls([list(prob)], prob, time_tag)

    @classmethod
    def discrete(cls, prob: Mapping[str, Rational], time_tag: int | None = None) -> Partition:
        return cls([[leaf] for leaf in prob], prob, time_tag)

    @classmethod
    def by_key(cls, prob: Mapping[str, Rational], key: Callable[[str], Hashable], time_tag: int | None = None) -> Partition:
        """
        Group leaves by equality of `key(leaf)`.
        """
        groups: dict[Hashable, list[str]] = {}
        for leaf in prob:
            groups.setdefault(key(leaf), []).append(leaf)
        return cls(groups.values(), prob, time_tag)

    @property
    def leaves(self) -> tuple[str, ...]:
        return tuple(self.prob)

    def __len__(self):
        return len(self.blocks)

    def __iter__(self) -> Iterator[tuple[str, ...]]:
        return iter(self.blocks)

    def __getitem__(self, i: int) -> tuple[str, ...]:
        return self.blocks[i]

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return frozenset(map(frozenset, self.blocks)) == frozenset(map(frozenset, other.blocks))

    def __hash__(self):
        return hash(frozenset(map(frozenset, self.blocks)))

    def __repr__(self):
        return f"Partition({[list(b) for b in self.blocks]}, time_tag={self.time_tag})"

    def block_of(self, leaf: str) -> int:
        return self._index[leaf]

    def block_prob(self, i: int) -> Rational:
        return sum((self.prob[leaf] for leaf in self.blocks[i]), Integer(0))

    def conditional_probs(self, i: int) -> list[Rational]:
        """
        The physical probabilities of the leaves of block `i`, conditional on the block.
        """
        mass = self.block_prob(i)
        return [self.prob[leaf] / mass for leaf in self.blocks[i]]

    def refines(self, other: Partition) -> bool:
        """
        Whether every block of `self` lies inside one block of `other`.
        """
        return all(len({other.block_of(leaf) for leaf in block}) == 1 for block in self.blocks)

    def coarsening_map(self, other: Partition) -> list[int]:
        """
        For each block of `self`, the index of the block of `other` containing it.

        Raises:
            NotMeasurable: if `self` does not refine `other`.
        """
        if not self.refines(other):
            raise NotMeasurable("Partition does not refine the target partition.")
        return [other.block_of(block[0]) for block in self.blocks]

    def join(self, other: Partition) -> Partition:
        """
        The coarsest common refinement of `self` and `other`.
        """
        return Partition.by_key(self.prob, lambda leaf: (self.block_of(leaf), other.block_of(leaf)), self.time_tag)

    def is_measurable(self, leaves: Iterable[str]) -> bool:
        """
        Whether the event `leaves` is a union of blocks.
        """
        leaves = set(leaves)
        return all(set(block) <= leaves or not (set(block) & leaves) for block in self.blocks)

    def blocks_in(self, leaves: Iterable[str]) -> tuple[int, ...]:
        """
        The indices of the blocks making up the measurable event `leaves`.

        Raises:
            NotMeasurable: if `leaves` is not a union of blocks.
        """
        leaves = set(leaves)
        if not self.is_measurable(leaves):
            raise NotMeasurable(f"Event {sorted(leaves)} is not a union of blocks of {self}.")
        return tuple(i for i, block in enumerate(self.blocks) if block[0] in leaves)

    def union(self, indices: Iterable[int]) -> frozenset[str]:
        return frozenset(leaf for i in indices for leaf in self.blocks[i])

    def unions(self, include_trivial: bool = True) -> Iterator[frozenset[str]]:
        """
        Iterate over all unions of blocks, smallest number of blocks first.
        """
        k = len(self.blocks)
        for size in range(k + 1):
            if not include_trivial and size in (0, k):
                continue
            for chosen in itertools.combinations(range(k), size):
                yield self.union(chosen)


@dataclass(frozen=True)
class ObservableSpec:
    """
    Selects the information generating a partition.

    Attributes:
        kind: one of
            - `"trivial"`: no information,
            - `"G"`: the initial information, the full path up to the tree's `g_time`,
            - `"S"`: the stock path up to `time`,
            - `"FS"`: the stock path up to `time` joined with `G`,
            - `"F"`: the full path up to `time`,
            - `"FS_tau"`: the stock path up to `time` joined with the full path up to `sigma`,
            - `"Y"`: the insurance path up to `time`.
        time: the time index for every kind except `"trivial"` and `"G"`.
        sigma: the second time index of `"FS_tau"`.
    """

    kind: str
    time: int | None = None
    sigma: int | None = None

    KINDS = ("trivial", "G", "S", "FS", "F", "FS_tau", "Y")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"Observable kind '{self.kind}' is not one of {self.KINDS}.")
        if self.kind not in ("trivial", "G") and self.time is None:
            raise UnknownTime(f"Observable '{self.kind}' requires a time.")
        if self.kind == "FS_tau" and self.sigma is None:
            raise UnknownTime("Observable 'FS_tau' requires the time 'sigma'.")

    @classmethod
    def parse(cls, text: str) -> ObservableSpec:
        """
        Parse `"trivial"`, `"G"`, `"FS:2"` or `"FS_tau:3@1"` (time 3, sigma 1).
        """
        kind, _, rest = text.partition(":")
        if not rest:
            return cls(kind)
        time, _, sigma = rest.partition("@")
        return cls(kind, int(time), int(sigma) if sigma else None)


def _check_time(tree: ScenarioTree, t: int):
    if t not in tree.times:
        raise UnknownTime(f"Time {t} is not one of the tree times {tree.times}.")


def partition_for(tree: ScenarioTree, spec: ObservableSpec | str) -> Partition:
    """
    The partition of leaves generated by the observables selected by `spec`.

    Args:
        tree: the scenario tree.
        spec: an `ObservableSpec`, or text accepted by `ObservableSpec.parse`.

    Returns:
        Partition: leaves grouped by equality of the selected observables. For every `t`,
            `F_t` refines `FS_t` which refines `G`.

    Raises:
        UnknownTime: if a requested time is not a tree time.
    """
    if isinstance(spec, str):
        spec = ObservableSpec.parse(spec)
    prob = tree.leaf_prob
    if spec.kind == "trivial":
        return Partition.trivial(prob, 0)
    if spec.kind == "G":
        return Partition.by_key(prob, lambda leaf: tree.ancestor(leaf, tree.g_time).id, tree.g_time)
    _check_time(tree, spec.time)
    t = spec.time
    if spec.kind == "F":
        return Partition.by_key(prob, lambda leaf: tree.ancestor(leaf, t).id, t)
    if spec.kind == "S":
        return Partition.by_key(prob, lambda leaf: _stock_path(tree, leaf, t), t)
    if spec.kind == "FS":
        return Partition.by_key(
            prob, lambda leaf: (_stock_path(tree, leaf, t), tree.ancestor(leaf, tree.g_time).id), t
        )
    if spec.kind == "Y":
        return Partition.by_key(prob, lambda leaf: tuple(tree.insurance_at(leaf, s) for s in range(t + 1)), t)
    # FS_tau
    _check_time(tree, spec.sigma)
    sigma = spec.sigma
    return Partition.by_key(prob, lambda leaf: (_stock_path(tree, leaf, t), tree.ancestor(leaf, sigma).id), t)


def _stock_path(tree: ScenarioTree, leaf: str, t: int) -> tuple:
    return tuple(tree.stock_at(leaf, s) for s in range(t + 1))


def financial_partition(tree: ScenarioTree, g_part: Partition | None = None) -> Partition:
    """
    The partition of `F^S = S-path up to T` joined with the initial information `g_part`
    (the tree's `G` by default).
    """
    fs = partition_for(tree, ObservableSpec("FS", tree.horizon))
    if g_part is not None:
        fs = fs.join(g_part)
    return fs
