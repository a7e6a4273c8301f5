"""
Drivers of backward stochastic difference equations.

A driver is a function `g(t, z^f, z, ztilde)` of the time index, the integrand against the
financial Brownian motions, the integrand against the insurance Brownian motions, and the
integrand against the compensated jump process (a map from mark to value). The evaluation
defined by a driver is market-consistent when `g - theta z^f` does not depend on `z^f`.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from mceval import numerics
from mceval.abstract import ParsingError, parse_number
from mceval.numerics import Number
from mceval.reports import FLOAT_MODE, CheckResult, Report, failure, sampled_status
from mceval.search import default_seed, substream

from .errors import InvalidParam
from .grid import GridModel

logger = logging.getLogger(__name__)

Evaluator = Callable[[int, Sequence[Number], Sequence[Number], Mapping[Number, Number]], Number]

SAMPLE_RANGE = 2.0


class DriverFn:
    """
    A driver `g(t, z^f, z, ztilde)`.

    Attributes:
        evaluator: the function.
        label: a name shown in reports.
        table: for a driver given by evaluated points, the rows
            `(t, z^f, z, ztilde, value)`; `None` otherwise.
    """

    def __init__(self, evaluator: Evaluator, label: str = "", table: list[tuple] | None = None):
        self.evaluator = evaluator
        self.label = label
        self.table = table

    def __call__(self, t: int, zf: Sequence[Number], z: Sequence[Number], ztilde: Mapping[Number, Number]) -> Number:
        return self.evaluator(t, tuple(zf), tuple(z), dict(ztilde))

    @classmethod
    def from_table(cls, rows: Iterable[Mapping], label: str = "table") -> DriverFn:
        """
        A driver known only at the points of `rows`. Each row maps `t`, `zf`, `z`, `ztilde` and
        `g` to values; vectors are lists or `;`-separated text, and `ztilde` is a map from
        mark to value or `mark:value;...` text.

        Raises:
            InvalidParam: if a row is incomplete or a number cannot be parsed.
        """
        table = []
        for row in rows:
            try:
                table.append(
                    (
                        int(row["t"]),
                        _parse_vector(row.get("zf", "")),
                        _parse_vector(row.get("z", "")),
                        _parse_marks(row.get("ztilde", "")),
                        parse_number(row["g"]),
                    )
                )
            except (KeyError, ValueError, ParsingError) as e:
                raise InvalidParam(f"Invalid driver table row {dict(row)}: {e}") from e
        if not table:
            raise InvalidParam("A driver table needs at least one row.")
        lookup = {(t, zf, z, tuple(sorted(zt.items()))): g for t, zf, z, zt, g in table}

        def evaluator(t, zf, z, ztilde):
            key = (t, tuple(zf), tuple(z), tuple(sorted(ztilde.items())))
            if key not in lookup:
                raise InvalidParam(f"Driver table has no row for {key}.")
            return lookup[key]

        return cls(evaluator, label, table)

    @classmethod
    def from_csv(cls, path: str | Path) -> DriverFn:
        with open(path, newline="") as f:
            return cls.from_table(csv.DictReader(f), label=Path(path).stem)

    def __repr__(self):
        return f"DriverFn({self.label or 'custom'})"


def _parse_vector(value) -> tuple[Number, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(parse_number(v) for v in value)
    value = str(value).strip()
    return tuple(parse_number(v) for v in value.split(";")) if value else ()


def _parse_marks(value) -> dict[Number, Number]:
    if isinstance(value, Mapping):
        return {parse_number(k): parse_number(v) for k, v in value.items()}
    value = str(value).strip()
    if not value:
        return {}
    out = {}
    for item in value.split(";"):
        mark, _, v = item.partition(":")
        out[parse_number(mark)] = parse_number(v)
    return out


def _theta_dot(model: GridModel, t: int, zf: Sequence[Number]) -> Number:
    return numerics.dot(model.theta(t), zf) if zf else numerics.ZERO


def driver_linear(model: GridModel) -> DriverFn:
    """
    The pricing driver `theta_t z^f`.
    """
    return DriverFn(lambda t, zf, z, zt: _theta_dot(model, t, zf), "linear")


def driver_mv(alpha, model: GridModel) -> DriverFn:
    """
    The Mean-Variance driver `theta_t z^f + alpha/2 (|z|^2 + sum_x ztilde(x)^2 nu(x))`.

    Raises:
        InvalidParam: if `alpha` is negative.
    """
    alpha = numerics.coerce(parse_number(alpha))
    if alpha < 0:
        raise InvalidParam(f"Mean-Variance loading must be nonnegative, not {alpha}.")
    intensity = dict(model.marks)

    def evaluator(t, zf, z, ztilde):
        squares = [numerics.power(v, 2) for v in z]
        squares += [numerics.mul(numerics.power(v, 2), intensity[x]) for x, v in ztilde.items()]
        quadratic = numerics.add(0, *squares)
        return numerics.add(_theta_dot(model, t, zf), numerics.mul(numerics.div(alpha, 2), quadratic))

    return DriverFn(evaluator, f"mv(alpha={numerics.to_text(alpha)})")


def driver_exp(gamma, model: GridModel) -> DriverFn:
    """
    The exponential driver
    `theta_t z^f + |z|^2 / (2 gamma) + gamma sum_x (exp(ztilde(x)/gamma) - ztilde(x)/gamma - 1) nu(x)`.

    Raises:
        InvalidParam: if `gamma` is not positive.
    """
    gamma = numerics.coerce(parse_number(gamma))
    if not gamma > 0:
        raise InvalidParam(f"Risk aversion parameter must be positive, not {gamma}.")
    intensity = dict(model.marks)
    g = float(gamma)

    def evaluator(t, zf, z, ztilde):
        value = numerics.add(_theta_dot(model, t, zf), numerics.div(numerics.add(0, *(numerics.power(v, 2) for v in z)), 2 * gamma))
        for x, v in ztilde.items():
            if v == 0:
                continue
            u = float(v) / g
            value = numerics.add(value, numerics.mul(g * (math.expm1(u) - u), intensity[x]))
        return value

    return DriverFn(evaluator, f"exp(gamma={numerics.to_text(gamma)})")


def _sample_point(model: GridModel, rng) -> tuple:
    t = rng.randrange(model.steps)
    z = tuple(rng.uniform(-SAMPLE_RANGE, SAMPLE_RANGE) for _ in range(model.n_insurance))
    ztilde = {x: rng.uniform(-SAMPLE_RANGE, SAMPLE_RANGE) for x, _ in model.marks}
    zf1 = tuple(rng.uniform(-SAMPLE_RANGE, SAMPLE_RANGE) for _ in range(model.n_financial))
    zf2 = tuple(rng.uniform(-SAMPLE_RANGE, SAMPLE_RANGE) for _ in range(model.n_financial))
    return t, zf1, zf2, z, ztilde


def driver_mc_check(g: DriverFn, model: GridModel, samples: int = 10_000, seed: int | None = None) -> Report:
    """
    Check that `g(t, z^f, z, ztilde) - theta_t z^f` does not depend on `z^f`.

    Points are sampled uniformly from `[-2, 2]` in every coordinate, with a pair of distinct
    `z^f` values per point. A driver given by a table is checked across its rows instead: rows
    sharing `(t, z, ztilde)` must agree after removing `theta_t z^f`.

    Args:
        g: the driver.
        model: the grid model supplying `theta` and the marks.
        samples: the number of sampled points, at least 2.
        seed: the sampling seed.

    Returns:
        Report: rows `normalization` and `market_consistency`. A failure carries the point
            `(t, z^f_1, z^f_2, z, ztilde)` and the two values.

    Raises:
        InvalidParam: if fewer than two samples are requested.
    """
    if samples < 2:
        raise InvalidParam(f"At least two samples are required, not {samples}.")
    seed = default_seed() if seed is None else seed
    report = Report(title=f"driver check of {g.label}", seed=seed)
    if g.table is not None:
        return _table_check(g, model, report)
    zero_f, zero_z = (0,) * model.n_financial, (0,) * model.n_insurance
    zero_marks = {x: 0 for x, _ in model.marks}
    bad = [t for t in range(model.steps) if not numerics.close(g(t, zero_f, zero_z, zero_marks), 0)]
    if bad:
        report.add(failure("normalization", {"t": bad[0], "value": g(bad[0], zero_f, zero_z, zero_marks)}, model.steps))
    else:
        report.add(CheckResult("normalization", "pass-exhaustive", model.steps))
    for i in range(samples):
        t, zf1, zf2, z, ztilde = _sample_point(model, substream(seed, i))
        v1 = numerics.sub(g(t, zf1, z, ztilde), _theta_dot(model, t, zf1))
        v2 = numerics.sub(g(t, zf2, z, ztilde), _theta_dot(model, t, zf2))
        if not numerics.close(v1, v2):
            witness = {"t": t, "zf_1": zf1, "zf_2": zf2, "z": z, "ztilde": ztilde, "value_1": v1, "value_2": v2}
            report.add(failure("market_consistency", witness, i + 1, seed, mode=FLOAT_MODE))
            return report
    report.add(CheckResult("market_consistency", sampled_status(samples), samples, seed=seed, mode=FLOAT_MODE))
    logger.info("Driver %s passed %d sampled points", g.label, samples)
    return report


def _table_check(g: DriverFn, model: GridModel, report: Report) -> Report:
    groups: dict[tuple, list[tuple]] = {}
    for t, zf, z, zt, value in g.table:
        reduced = numerics.sub(value, _theta_dot(model, t, zf))
        groups.setdefault((t, z, tuple(sorted(zt.items()))), []).append((zf, reduced))
    for count, ((t, z, zt), rows) in enumerate(groups.items(), start=1):
        for zf, reduced in rows[1:]:
            if not numerics.close(reduced, rows[0][1]):
                witness = {"t": t, "zf_1": rows[0][0], "zf_2": zf, "z": z, "ztilde": dict(zt), "value_1": rows[0][1], "value_2": reduced}
                report.add(failure("market_consistency", witness, count))
                return report
    report.add(CheckResult("market_consistency", "pass-exhaustive", len(g.table), note="table rows"))
    return report
