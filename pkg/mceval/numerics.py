"""
Arithmetic shared by every module.

Two numeric modes coexist. Exact values are `sympy.Rational` instances and are produced by
every linear or quadratic computation on rational input. Square roots that are not rational,
logarithms and exponentials produce Python `float` values. Whenever a computation mixes the
two, every operand is first converted to `float`, so that no `sympy.Float` ever leaks out.

Comparisons involving a float use a relative tolerance of `REL_TOL` with an absolute floor of
`ABS_TOL`. Comparisons between exact values are exact.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np
from sympy import Basic, Float, Integer, Rational, root as sym_root, sqrt as sym_sqrt

Number = Union[Rational, float]

REL_TOL = 1e-9
ABS_TOL = 1e-12

ZERO = Integer(0)
ONE = Integer(1)


def coerce(value) -> Number:
    """
    Convert `value` to a `sympy.Rational` when it is exact, or to a `float` otherwise.

    Args:
        value: an `int`, `fractions.Fraction`, `float`, numpy scalar or `sympy` number.

    Raises:
        TypeError: if `value` is not a real number.
    """
    if isinstance(value, bool):
        raise TypeError(f"Boolean {value} is not accepted as a number.")
    if isinstance(value, Rational):
        return value
    if isinstance(value, int):
        return Integer(value)
    if isinstance(value, Fraction):
        return Rational(value.numerator, value.denominator)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, np.integer):
        return Integer(int(value))
    if isinstance(value, Float):
        return float(value)
    if isinstance(value, Basic):
        if value.is_Rational:
            return Rational(value)
        if value.is_real and value.is_finite:
            return float(value)
    raise TypeError(f"Value {value} of type {type(value)} is not a real number.")


def is_exact(value) -> bool:
    return isinstance(value, (int, Rational)) and not isinstance(value, bool)


def unify(values: Iterable) -> list[Number]:
    """
    Coerce every entry of `values`, converting all of them to `float` if any one is a float.
    """
    values = [coerce(v) for v in values]
    if any(isinstance(v, float) for v in values):
        return [float(v) for v in values]
    return values


def harmonize(*groups: Sequence) -> list[list[Number]]:
    """
    Coerce several sequences to one common mode: all exact, or all float.
    """
    coerced = [[coerce(v) for v in group] for group in groups]
    if any(isinstance(v, float) for group in coerced for v in group):
        return [[float(v) for v in group] for group in coerced]
    return coerced


def add(*values) -> Number:
    values = unify(values)
    total = values[0]
    for v in values[1:]:
        total = total + v
    return total


def sub(a, b) -> Number:
    a, b = unify((a, b))
    return a - b


def mul(*values) -> Number:
    values = unify(values)
    product = values[0]
    for v in values[1:]:
        product = product * v
    return product


def div(a, b) -> Number:
    a, b = unify((a, b))
    return a / b


def dot(weights: Sequence, values: Sequence) -> Number:
    """
    The weighted sum of `values`, summed left to right.
    """
    weights, values = harmonize(weights, values)
    if weights and isinstance(weights[0], float):
        return float(np.dot(np.asarray(weights, dtype=float), np.asarray(values, dtype=float)))
    total = ZERO
    for w, v in zip(weights, values):
        total += w * v
    return total


def maximum(values: Iterable) -> Number:
    return max(unify(values))


def minimum(values: Iterable) -> Number:
    return min(unify(values))


def positive_part(value) -> Number:
    value = coerce(value)
    return value if value > 0 else (ZERO if is_exact(value) else 0.0)


def sqrt(value) -> Number:
    """
    The square root of `value`, exact when `value` is the square of a rational.
    """
    value = coerce(value)
    if is_exact(value) and value >= 0:
        result = sym_sqrt(value)
        if result.is_Rational:
            return Rational(result)
    return float(np.sqrt(float(value)))


def nth_root(value, q) -> Number:
    """
    The `q`-th root of the nonnegative `value`, exact when it is rational.
    """
    value, q = coerce(value), coerce(q)
    if q == 1:
        return value
    if is_exact(value) and is_exact(q) and q.is_Integer and value >= 0:
        result = sym_root(value, q)
        if result.is_Rational:
            return Rational(result)
    return float(value) ** (1.0 / float(q))


def power(value, q) -> Number:
    value, q = coerce(value), coerce(q)
    if is_exact(value) and is_exact(q) and q.is_Integer:
        return value**q
    return float(value) ** float(q)


def log(value) -> float:
    return float(np.log(float(value)))


def exp(value) -> float:
    return float(np.exp(float(value)))


def to_float(value) -> float:
    return float(coerce(value))


def close(a, b, rel: float = REL_TOL, abs_tol: float = ABS_TOL) -> bool:
    """
    Equality for exact values, tolerance comparison as soon as a float is involved.
    """
    a, b = coerce(a), coerce(b)
    if is_exact(a) and is_exact(b):
        return a == b
    fa, fb = float(a), float(b)
    if math.isinf(fa) or math.isinf(fb):
        return fa == fb
    return abs(fa - fb) <= max(rel * max(abs(fa), abs(fb)), abs_tol)


def leq(a, b, rel: float = REL_TOL, abs_tol: float = ABS_TOL) -> bool:
    """
    `a <= b`, allowing the tolerance of `close` when a float is involved.
    """
    a, b = coerce(a), coerce(b)
    if is_exact(a) and is_exact(b):
        return bool(a <= b)
    return float(a) <= float(b) or close(a, b, rel, abs_tol)


def to_text(value) -> str:
    """
    Render a number for reports: `"p/q"` for exact values, `repr` for floats.
    """
    value = coerce(value)
    if is_exact(value):
        return str(value)
    return repr(float(value))
