from __future__ import annotations

from abc import ABC, abstractmethod
from tokenize import TokenError
from typing import TYPE_CHECKING, Callable

from sympy import Basic, Rational
from sympy.parsing.sympy_parser import (
    parse_expr,
    rationalize,
    standard_transformations,
)

from mceval.numerics import Number, coerce

if TYPE_CHECKING:
    from mceval.model.partitions import Partition
    from mceval.model.values import ConditionalValue, Payoff

TRANSFORMATIONS = standard_transformations + (rationalize,)


class ParsingError(Exception):
    pass


def parse_number(value: str | int | float | Basic, parsing_locals: dict = {}) -> Number:
    """
    Parse a configuration number. Decimal literals become exact rationals, so that `"0.1"`
    is parsed to `1/10`. Expressions without a rational value (for example `"log(4)"`) become
    floats.

    Args:
        value: the number or expression to parse.
        parsing_locals: a dictionary mapping strings to `sympy` objects.

    Raises:
        ParsingError: if `value` does not describe a finite real number.
    """
    if isinstance(value, bool):
        raise ParsingError(f"Boolean {value} is not accepted as a number.")
    if isinstance(value, str):
        try:
            value = parse_expr(value, local_dict=parsing_locals, transformations=TRANSFORMATIONS)
        except (SyntaxError, TypeError, ValueError, TokenError) as e:
            raise ParsingError(f"Could not parse '{value}' as a number.") from e
    elif isinstance(value, float):
        value = Rational(repr(value))
    try:
        return coerce(value)
    except TypeError as e:
        raise ParsingError(f"Expression {value} of type {type(value)} is not a real number.") from e


class EvaluationOracle(ABC):
    """
    A black-box evaluation: a map from payoffs to conditional values on a fixed partition.

    Subclasses implement `__call__`. The attribute `partition` names the conditioning
    partition of every value returned.
    """

    partition: Partition

    @abstractmethod
    def __call__(self, H: Payoff) -> ConditionalValue:
        pass

    def describe(self) -> str:
        return type(self).__name__

    def __repr__(self):
        return f"{type(self).__name__} object: {self.describe()}"


class FunctionOracle(EvaluationOracle):
    """
    Wraps a plain callable `Payoff -> ConditionalValue` as an `EvaluationOracle`.
    """

    def __init__(self, function: Callable[[Payoff], ConditionalValue], partition: Partition, label: str = ""):
        self.function = function
        self.partition = partition
        self.label = label

    def __call__(self, H: Payoff) -> ConditionalValue:
        return self.function(H)

    def describe(self) -> str:
        return self.label or getattr(self.function, "__name__", "function")


class OracleFamily(ABC):
    """
    A time-indexed family of evaluations. `family(t, H)` is the value of `H` at time `t`,
    a conditional value on the full-information partition at `t`.
    """

    @abstractmethod
    def __call__(self, t: int, H: Payoff) -> ConditionalValue:
        pass

    @abstractmethod
    def partition(self, t: int) -> Partition:
        pass

    def at(self, t: int) -> EvaluationOracle:
        """
        The evaluation at time `t` as a stand-alone oracle.
        """
        return FunctionOracle(lambda H: self(t, H), self.partition(t), label=f"{type(self).__name__}[{t}]")


def as_oracle(op, partition: Partition | None = None) -> EvaluationOracle:
    if isinstance(op, EvaluationOracle):
        return op
    if partition is None:
        raise TypeError(f"A partition is required to wrap {op} as an evaluation oracle.")
    return FunctionOracle(op, partition)


