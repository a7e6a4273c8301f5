"""
Conditional actuarial premium principles.

Each principle is applied block by block: on every block of the conditioning partition the
payoff is a finite distribution under the conditional physical measure, and the principle
maps that distribution to a number.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields, replace
from typing import Iterable, Mapping, Sequence

from scipy.special import logsumexp
from sympy import Integer

from mceval import numerics
from mceval.abstract import EvaluationOracle, ParsingError, parse_number
from mceval.model.errors import NotMeasurable
from mceval.model.partitions import Partition
from mceval.model.values import ConditionalValue, Payoff
from mceval.numerics import Number

from .errors import InvalidLevel, InvalidSpec

logger = logging.getLogger(__name__)

PRINCIPLE_ALIASES = {
    "MeanVariance": ["meanvariance", "mean_variance", "mean-variance", "mv"],
    "StdDev": ["stddev", "std_dev", "std", "sd"],
    "SemiDeviation": ["semideviation", "semi_deviation", "semi", "semidev"],
    "AVaR": ["avar", "cvar", "es", "expected_shortfall"],
    "Exponential": ["exponential", "exp", "entropic"],
    "Expectation": ["expectation", "mean", "e", "linear"],
}

PARAMETERS = {
    "MeanVariance": ("alpha",),
    "StdDev": ("beta",),
    "SemiDeviation": ("lambda_", "q_exp"),
    "AVaR": ("delta", "avar_level"),
    "Exponential": ("gamma",),
    "Expectation": (),
}

SHORT_NAMES = {
    "MeanVariance": "mv",
    "StdDev": "sd",
    "SemiDeviation": "semi",
    "AVaR": "avar",
    "Exponential": "exp",
    "Expectation": "e",
}

_PARAMETER_ALIASES = {
    "lambda": "lambda_",
    "lam": "lambda_",
    "q": "q_exp",
    "level": "avar_level",
}


def resolve_kind(name: str) -> str:
    """
    The canonical principle kind for `name` or one of its aliases.
    """
    if name in PRINCIPLE_ALIASES:
        return name
    for kind, aliases in PRINCIPLE_ALIASES.items():
        if name.lower() in aliases:
            return kind
    raise InvalidSpec(f"Principle '{name}' is not one of {list(PRINCIPLE_ALIASES)} or their aliases.")


def _resolve_parameter(kind: str, name: str) -> str:
    if kind == "AVaR" and name == "alpha":
        return "avar_level"
    name = _PARAMETER_ALIASES.get(name, name)
    if name not in PARAMETERS[kind]:
        raise InvalidSpec(f"Principle {kind} takes parameters {PARAMETERS[kind]}, not '{name}'.")
    return name


@dataclass(frozen=True)
class PrincipleSpec:
    """
    Selects one conditional premium principle and its parameters.

    Only the parameters of `kind` are meaningful; the others keep their defaults.

    Attributes:
        kind: one of the keys of `PRINCIPLE_ALIASES`.
        alpha: the Mean-Variance loading, at least 0.
        beta: the Standard-Deviation loading, at least 0.
        lambda_: the Semi-Deviation loading, at least 0.
        q_exp: the Semi-Deviation exponent, at least 1.
        delta: the AV@R loading, at least 0.
        avar_level: the AV@R level, in `(0, 1]`.
        gamma: the Exponential risk tolerance, positive.
    """

    kind: str
    alpha: Number = Integer(0)
    beta: Number = Integer(0)
    lambda_: Number = Integer(0)
    q_exp: Number = Integer(1)
    delta: Number = Integer(0)
    avar_level: Number = Integer(1)
    gamma: Number = Integer(1)

    def __post_init__(self):
        object.__setattr__(self, "kind", resolve_kind(self.kind))
        for f in fields(self):
            if f.name == "kind":
                continue
            try:
                object.__setattr__(self, f.name, parse_number(getattr(self, f.name)))
            except ParsingError as e:
                raise InvalidSpec(f"Parameter {f.name} of principle {self.kind}: {e}") from e
        for name in ("alpha", "beta", "lambda_", "delta"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"Parameter {name} must be nonnegative, not {getattr(self, name)}.")
        if self.q_exp < 1:
            raise InvalidSpec(f"Semi-Deviation exponent must be at least 1, not {self.q_exp}.")
        if self.gamma <= 0:
            raise InvalidSpec(f"Exponential parameter gamma must be positive, not {self.gamma}.")
        check_level(self.avar_level)

    @classmethod
    def mean_variance(cls, alpha) -> PrincipleSpec:
        return cls("MeanVariance", alpha=alpha)

    @classmethod
    def std_dev(cls, beta) -> PrincipleSpec:
        return cls("StdDev", beta=beta)

    @classmethod
    def semi_deviation(cls, lambda_, q_exp=1) -> PrincipleSpec:
        return cls("SemiDeviation", lambda_=lambda_, q_exp=q_exp)

    @classmethod
    def avar(cls, delta, level) -> PrincipleSpec:
        return cls("AVaR", delta=delta, avar_level=level)

    @classmethod
    def exponential(cls, gamma) -> PrincipleSpec:
        return cls("Exponential", gamma=gamma)

    @classmethod
    def expectation(cls) -> PrincipleSpec:
        return cls("Expectation")

    @classmethod
    def from_params(cls, kind: str, params: Mapping[str, object]) -> PrincipleSpec:
        kind = resolve_kind(kind)
        resolved = {}
        for name, value in params.items():
            resolved[_resolve_parameter(kind, name)] = value
        return cls(kind, **resolved)

    @classmethod
    def parse(cls, text: str) -> PrincipleSpec:
        """
        Parse `"kind:name=value,name=value"`, for example `"mv:alpha=1"` or
        `"avar:delta=1/2,level=1/4"`. A JSON object `{"kind": ..., "params": {...}}` is
        accepted as well.

        Raises:
            InvalidSpec: if the kind or a parameter is unknown, or a value is out of range.
        """
        text = text.strip()
        if text.startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as e:
                raise InvalidSpec(f"Principle '{text}' is not valid JSON: {e}") from e
            if "kind" not in data:
                raise InvalidSpec("A principle object must include key 'kind'.")
            return cls.from_params(data["kind"], data.get("params", {}))
        kind, _, rest = text.partition(":")
        params = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            name, sep, value = item.partition("=")
            if not sep:
                raise InvalidSpec(f"Parameter '{item}' of principle '{text}' must have the form name=value.")
            params[name.strip()] = value.strip()
        return cls.from_params(kind, params)

    @property
    def parameters(self) -> dict[str, Number]:
        return {name: getattr(self, name) for name in PARAMETERS[self.kind]}

    def to_text(self) -> str:
        params = ",".join(f"{name}={numerics.to_text(v)}" for name, v in self.parameters.items())
        return f"{SHORT_NAMES[self.kind]}:{params}" if params else SHORT_NAMES[self.kind]

    def with_params(self, **params) -> PrincipleSpec:
        return replace(self, **params)

    @property
    def is_coherent(self) -> bool:
        """
        Whether the principle is positively homogeneous (and hence coherent).
        """
        if self.kind == "MeanVariance":
            return self.alpha == 0
        return self.kind != "Exponential"

    @property
    def is_monotone(self) -> bool:
        """
        Whether the principle is monotone for its parameters. Semi-Deviation and AV@R are
        monotone for loadings in `[0, 1]`; Mean-Variance and Standard-Deviation only without
        loading.
        """
        if self.kind == "MeanVariance":
            return self.alpha == 0
        if self.kind == "StdDev":
            return self.beta == 0
        if self.kind == "SemiDeviation":
            return self.lambda_ <= 1
        if self.kind == "AVaR":
            return self.delta <= 1
        return True

    @property
    def exact(self) -> bool:
        """
        Whether values are exact on rational payoffs. Standard-Deviation, Semi-Deviation with
        `q > 1` and Exponential may fall back to floats.
        """
        if self.kind == "StdDev":
            return self.beta == 0
        if self.kind == "SemiDeviation":
            return self.q_exp == 1 or self.lambda_ == 0
        return self.kind != "Exponential"

    def to_record(self) -> dict:
        return {"kind": self.kind, "params": {k: numerics.to_text(v) for k, v in self.parameters.items()}}

    def __str__(self):
        return self.to_text()


def check_level(level) -> Number:
    """
    Raises:
        InvalidLevel: if `level` is not in `(0, 1]`.
    """
    try:
        level = parse_number(level)
    except ParsingError as e:
        raise InvalidLevel(f"Could not parse AV@R level: {e}") from e
    if not 0 < level <= 1:
        raise InvalidLevel(f"AV@R level must lie in (0, 1], not {level}.")
    return level


def _block_distribution(H: Mapping[str, Number], part: Partition, i: int) -> tuple[list[Number], list[Number]]:
    block = part.blocks[i]
    return [H[leaf] for leaf in block], part.conditional_probs(i)


def _atoms(values: Sequence[Number], probs: Sequence[Number]) -> list[tuple[Number, Number]]:
    """
    The distinct values in increasing order, with their total probabilities.
    """
    masses: dict = {}
    for v, p in zip(values, probs):
        masses[v] = numerics.add(masses.get(v, Integer(0)), p)
    return sorted(masses.items(), key=lambda item: item[0])


def var_value(values: Sequence[Number], probs: Sequence[Number], level) -> Number:
    """
    The lower-quantile Value at Risk of a finite loss distribution: the smallest atom `s`
    with `P(H > s) <= level`.
    """
    level = check_level(level)
    atoms = _atoms(numerics.unify(values), probs)
    tail = numerics.add(*(p for _, p in atoms))
    for s, p in atoms:
        tail = numerics.sub(tail, p)
        if numerics.leq(tail, level):
            return s
    return atoms[-1][0]


def avar_value(values: Sequence[Number], probs: Sequence[Number], level) -> Number:
    """
    The Average Value at Risk of a finite loss distribution,
    `min_s { s + E[(H - s)_+] / level }`, where the minimum is attained at an atom.
    """
    level = check_level(level)
    values = numerics.unify(values)
    candidates = []
    for s, _ in _atoms(values, probs):
        excess = numerics.dot(probs, [numerics.positive_part(numerics.sub(v, s)) for v in values])
        candidates.append(numerics.add(s, numerics.div(excess, level)))
    return numerics.minimum(candidates)


def principle_value(spec: PrincipleSpec, values: Sequence[Number], probs: Sequence[Number]) -> Number:
    """
    The value of the principle `spec` for the finite distribution taking `values[i]` with
    probability `probs[i]`.
    """
    values = numerics.unify(values)
    if all(v == values[0] for v in values):
        return values[0]
    mean = numerics.dot(probs, values)
    kind = spec.kind
    if kind == "Expectation":
        return mean
    if kind == "MeanVariance":
        variance = numerics.dot(probs, [numerics.power(numerics.sub(v, mean), 2) for v in values])
        return numerics.add(mean, numerics.mul(spec.alpha / 2, variance))
    if kind == "StdDev":
        if spec.beta == 0:
            return mean
        variance = numerics.dot(probs, [numerics.power(numerics.sub(v, mean), 2) for v in values])
        return numerics.add(mean, numerics.mul(spec.beta, numerics.sqrt(variance)))
    if kind == "SemiDeviation":
        if spec.lambda_ == 0:
            return mean
        moment = numerics.dot(
            probs, [numerics.power(numerics.positive_part(numerics.sub(v, mean)), spec.q_exp) for v in values]
        )
        return numerics.add(mean, numerics.mul(spec.lambda_, numerics.nth_root(moment, spec.q_exp)))
    if kind == "AVaR":
        if spec.delta == 0:
            return mean
        tail = avar_value(values, probs, spec.avar_level)
        return numerics.add(mean, numerics.mul(spec.delta, numerics.sub(tail, mean)))
    # Exponential
    gamma = float(spec.gamma)
    scaled = [float(v) / gamma for v in values]
    return gamma * float(logsumexp(scaled, b=[float(p) for p in probs]))


def evaluate(spec: PrincipleSpec, H: Mapping[str, Number], part: Partition) -> ConditionalValue:
    """
    Apply the principle `spec` to `H` on every block of `part`, under the conditional
    physical measure.

    Args:
        spec: the principle.
        H: the payoff, a loss.
        part: the conditioning partition.

    Returns:
        ConditionalValue: one value per block. A payoff constant on a block is returned
            unchanged on that block.

    Raises:
        InvalidSpec: if `spec` is not a `PrincipleSpec`.

    Example:
        ```
        spec = PrincipleSpec.parse("mv:alpha=2")
        evaluate(spec, Payoff({"a": 1, "b": -1}), Partition.trivial({"a": Rational(1, 2), "b": Rational(1, 2)}))
        ```
        returns the single value `1`.
    """
    if not isinstance(spec, PrincipleSpec):
        raise InvalidSpec(f"Expected a PrincipleSpec, not {type(spec).__name__}.")
    values = [principle_value(spec, *_block_distribution(H, part, i)) for i in range(len(part))]
    return ConditionalValue(part, values)


def avar(H: Mapping[str, Number], part: Partition, level) -> ConditionalValue:
    """
    The conditional Average Value at Risk of `H` at `level`, block by block.

    Raises:
        InvalidLevel: if `level` is not in `(0, 1]`.
    """
    level = check_level(level)
    return ConditionalValue(part, [avar_value(*_block_distribution(H, part, i), level) for i in range(len(part))])


def var(H: Mapping[str, Number], part: Partition, level) -> ConditionalValue:
    """
    The conditional lower-quantile Value at Risk of `H` at `level`, block by block.
    """
    level = check_level(level)
    return ConditionalValue(part, [var_value(*_block_distribution(H, part, i), level) for i in range(len(part))])


def local_glue(vals: Sequence[tuple[Iterable[str], ConditionalValue]]) -> ConditionalValue:
    """
    Paste conditional values along events: on the blocks inside the `i`-th event the result
    takes the values of the `i`-th conditional value.

    Args:
        vals: pairs `(event, value)`. The events must be unions of blocks of the common
            partition, and together partition the leaves.

    Raises:
        NotMeasurable: if an event is not a union of blocks, events overlap or do not cover the
            leaves, or the values live on different partitions.
    """
    if not vals:
        raise NotMeasurable("Nothing to glue.")
    part = vals[0][1].partition
    chosen: dict[int, Number] = {}
    for event, value in vals:
        if value.partition != part:
            raise NotMeasurable("Glued values must live on the same partition.")
        for i in part.blocks_in(event):
            if i in chosen:
                raise NotMeasurable(f"Block {part.blocks[i]} lies in two glued events.")
            chosen[i] = value.at(part.blocks[i][0])
    if len(chosen) != len(part):
        raise NotMeasurable("Glued events do not cover every leaf.")
    return ConditionalValue(part, chosen)


class PrincipleOracle(EvaluationOracle):
    """
    The oracle `H -> evaluate(spec, H, partition)`.
    """

    def __init__(self, spec: PrincipleSpec, partition: Partition):
        self.spec = spec
        self.partition = partition

    def __call__(self, H: Payoff) -> ConditionalValue:
        return evaluate(self.spec, H, self.partition)

    def describe(self) -> str:
        return self.spec.to_text()
