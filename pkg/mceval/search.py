"""
Enumeration of lattice inputs for property checks.

A search is described by groups of coordinates, each with its own finite value set. When the
product of all value sets has at most `exhaustive_limit` elements every combination is
visited; otherwise `trials` combinations are drawn, trial `i` from its own generator seeded
by `f"{seed}:{i}"`, so that the cases do not depend on how trials are scheduled.
"""

from __future__ import annotations

import itertools
import math
import os
import random
from typing import Iterator, Sequence

from sympy import Integer, Rational

DEFAULT_LATTICE = tuple(Integer(v) for v in (-2, -1, 0, 1, 2))
NONNEGATIVE_LATTICE = tuple(Integer(v) for v in (0, 1, 2))
SCALARS = (Integer(0), Rational(1, 4), Rational(1, 2), Rational(3, 4), Integer(1))
LOADINGS = (Integer(0), Rational(1, 2), Integer(2), Integer(3))

DEFAULT_SEED = 42
DEFAULT_EXHAUSTIVE_LIMIT = 4096
DEFAULT_TRIALS = 10_000
SEED_VARIABLE = "MCEVAL_SEED"


def default_seed() -> int:
    """
    The seed named by the environment variable `MCEVAL_SEED`, or 42.
    """
    value = os.environ.get(SEED_VARIABLE)
    if value is None or value == "":
        return DEFAULT_SEED
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"Environment variable {SEED_VARIABLE} must be an integer, not '{value}'.")


def substream(seed: int, index: int) -> random.Random:
    return random.Random(f"{seed}:{index}")


class LatticeSearch:
    """
    Plans and yields the cases of a property check.

    A group is either an `int` (that many coordinates on the default lattice) or a pair
    `(count, values)`.
    """

    def __init__(
        self,
        lattice: Sequence = DEFAULT_LATTICE,
        exhaustive_limit: int = DEFAULT_EXHAUSTIVE_LIMIT,
        trials: int = DEFAULT_TRIALS,
        seed: int | None = None,
    ):
        if trials <= 0:
            raise ValueError(f"Number of trials must be positive, not '{trials}'.")
        self.lattice = tuple(lattice)
        self.exhaustive_limit = exhaustive_limit
        self.trials = trials
        self.seed = default_seed() if seed is None else seed

    def _groups(self, groups) -> list[tuple[int, tuple]]:
        normalized = []
        for group in groups:
            if isinstance(group, int):
                normalized.append((group, self.lattice))
            else:
                count, values = group
                normalized.append((count, tuple(values)))
        return normalized

    def size(self, *groups) -> int:
        return math.prod(len(values) ** count for count, values in self._groups(groups))

    def is_exhaustive(self, *groups) -> bool:
        return self.size(*groups) <= self.exhaustive_limit

    def count(self, *groups) -> int:
        return self.size(*groups) if self.is_exhaustive(*groups) else self.trials

    def cases(self, *groups) -> Iterator[list[tuple]]:
        """
        Yield one list per case, holding one tuple of values per group.
        """
        groups = self._groups(groups)
        flat = [values for count, values in groups for _ in range(count)]
        if math.prod(len(values) for values in flat) <= self.exhaustive_limit:
            for combo in itertools.product(*flat):
                yield self._split(combo, groups)
        else:
            for index in range(self.trials):
                rng = substream(self.seed, index)
                combo = [rng.choice(values) for values in flat]
                yield self._split(combo, groups)

    @staticmethod
    def _split(combo, groups) -> list[tuple]:
        out, start = [], 0
        for count, _ in groups:
            out.append(tuple(combo[start : start + count]))
            start += count
        return out
