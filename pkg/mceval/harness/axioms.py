"""
Axiom conformance of black-box evaluations.

`check_axioms` runs every property of a conditional evaluation against an oracle, on payoffs
with values in a finite lattice. Each property is checked exhaustively when the number of
cases is small enough, and on seeded samples otherwise.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from mceval import numerics
from mceval.abstract import EvaluationOracle, ParsingError, as_oracle, parse_number
from mceval.evaluate.twostep import initial_partition, is_market_consistent_witness, market_local_witness, pricing_measure
from mceval.model.errors import InvalidConfig
from mceval.model.partitions import Partition
from mceval.model.tree import ScenarioTree
from mceval.model.values import ConditionalValue, Density, Payoff, cond_expectation
from mceval.reports import EXACT_MODE, FLOAT_MODE, AxiomReport, CheckResult, failure, pass_status
from mceval.search import (
    DEFAULT_EXHAUSTIVE_LIMIT,
    DEFAULT_LATTICE,
    DEFAULT_TRIALS,
    LOADINGS,
    NONNEGATIVE_LATTICE,
    SCALARS,
    LatticeSearch,
    default_seed,
)

from .errors import OracleFailure

logger = logging.getLogger(__name__)

AXIOMS = (
    "normalization",
    "cash_invariance",
    "convexity",
    "local",
    "monotonicity",
    "positive_homogeneity",
    "market_consistency",
    "market_local",
    "pnorm",
)

REQUIRED_AXIOMS = {"normalization", "cash_invariance", "convexity", "local"}


class CheckConfig(dict):
    """
    A dictionary holding the settings of `check_axioms`.

    ```
    {
        "lattice": [-2, -1, 0, 1, 2],
        "exhaustive_limit": 4096,
        "trials": 10000,
        "seed": 42,
        "axioms": ["normalization", "cash_invariance"],
        "market": true,
        "pnorm": {"p": 2, "lam": 2, "measure": "P"}
    }
    ```

    Every key is optional. `market` makes the market rows required; `pnorm` enables the
    p-norm boundedness row, with `lam` a number or one number per block of `G`.
    """

    ALLOWED_KEYS = {"lattice", "exhaustive_limit", "trials", "seed", "axioms", "market", "pnorm"}
    PNORM_KEYS = {"p", "lam", "measure"}

    def __init__(self, data: Mapping | None = None, **kwargs):
        data = dict(data or {}, **{k: v for k, v in kwargs.items() if v is not None})
        self._check_keys(data)
        super().__init__(data)

    @classmethod
    def from_json(cls, text: str) -> CheckConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"Check configuration is not valid JSON: {e}") from e
        if not isinstance(data, dict):
            raise InvalidConfig(f"Check configuration must be a JSON object, not {type(data).__name__}.")
        return cls(data)

    @classmethod
    def from_file(cls, path: str | Path) -> CheckConfig:
        return cls.from_json(Path(path).read_text())

    def _check_keys(self, data):
        if extra_keys := data.keys() - self.ALLOWED_KEYS:
            raise InvalidConfig(f"Check configuration cannot include keys {extra_keys}")
        if unknown := set(data.get("axioms", AXIOMS)) - set(AXIOMS):
            raise InvalidConfig(f"Unknown axioms {unknown}. Please use names from {list(AXIOMS)}")
        if "pnorm" in data:
            pnorm = data["pnorm"]
            if not isinstance(pnorm, dict) or not {"p", "lam"} <= pnorm.keys():
                raise InvalidConfig("Key 'pnorm' must be an object with keys 'p' and 'lam'.")
            if extra_keys := pnorm.keys() - self.PNORM_KEYS:
                raise InvalidConfig(f"Key 'pnorm' cannot include keys {extra_keys}")
        for key in ("exhaustive_limit", "trials"):
            if key in data and (not isinstance(data[key], int) or data[key] <= 0):
                raise InvalidConfig(f"Key '{key}' must be a positive integer, not '{data[key]}'.")

    @property
    def lattice(self) -> tuple:
        try:
            return tuple(parse_number(v) for v in self.get("lattice", DEFAULT_LATTICE))
        except ParsingError as e:
            raise InvalidConfig(f"Could not parse lattice: {e}") from e

    @property
    def exhaustive_limit(self) -> int:
        return self.get("exhaustive_limit", DEFAULT_EXHAUSTIVE_LIMIT)

    @property
    def trials(self) -> int:
        return self.get("trials", DEFAULT_TRIALS)

    @property
    def seed(self) -> int:
        seed = self.get("seed")
        return default_seed() if seed is None else int(seed)

    @property
    def axioms(self) -> tuple[str, ...]:
        return tuple(self.get("axioms", AXIOMS))

    @property
    def market(self) -> bool:
        return bool(self.get("market", False))

    @property
    def pnorm(self) -> dict | None:
        return self.get("pnorm")

    def search(self, lattice: Sequence | None = None) -> LatticeSearch:
        return LatticeSearch(self.lattice if lattice is None else lattice, self.exhaustive_limit, self.trials, self.seed)


def _call(op: EvaluationOracle, H: Payoff) -> ConditionalValue:
    try:
        return op(H)
    except Exception as e:
        raise OracleFailure(f"Oracle {op.describe()} failed on payoff {H.to_record()}: {e}") from e


def _mode(*values: ConditionalValue) -> str:
    exact = all(numerics.is_exact(v) for value in values for v in value.values)
    return EXACT_MODE if exact else FLOAT_MODE


def _violations(lhs: ConditionalValue, rhs: ConditionalValue, relation: str) -> list[int]:
    if relation == "eq":
        return lhs.mismatches(rhs)
    return [i for i in range(len(lhs)) if not numerics.leq(lhs[i], rhs[i])]


def _run(
    name: str,
    search: LatticeSearch,
    groups: tuple,
    case: Callable[..., tuple[ConditionalValue, ConditionalValue, dict]],
    relation: str = "eq",
) -> CheckResult:
    """
    Evaluate `case` on every planned combination of `groups`. A case returns the two sides
    of the property and the inputs producing them; the property holds when the sides are
    equal (`relation="eq"`) or the left side is below the right side (`relation="leq"`).
    """
    exhaustive = search.is_exhaustive(*groups)
    count, mode = 0, EXACT_MODE
    for values in search.cases(*groups):
        count += 1
        lhs, rhs, inputs = case(*values)
        if _mode(lhs, rhs) == FLOAT_MODE:
            mode = FLOAT_MODE
        if bad := _violations(lhs, rhs, relation):
            witness = dict(inputs, block=bad[0], lhs=lhs[bad[0]], rhs=rhs[bad[0]])
            return failure(name, witness, count, None if exhaustive else search.seed, mode=mode)
    logger.debug("Property '%s' held on %d cases", name, count)
    return CheckResult(name, pass_status(exhaustive, count), count, seed=None if exhaustive else search.seed, mode=mode)


class _Axioms:
    """
    The property checks of one oracle on one tree.
    """

    def __init__(self, op: EvaluationOracle, tree: ScenarioTree, g_part: Partition, cfg: CheckConfig):
        self.op = op
        self.tree = tree
        self.g_part = g_part
        self.cfg = cfg
        self.leaves = tree.leaves
        self.n = len(self.leaves)
        self.k = len(g_part)

    def payoff(self, values) -> Payoff:
        return Payoff(dict(zip(self.leaves, values)))

    def g_value(self, values) -> ConditionalValue:
        return ConditionalValue(self.g_part, list(values))

    def normalization(self) -> CheckResult:
        zero = Payoff.zeros(self.leaves)
        value = _call(self.op, zero)
        bad = [i for i, v in enumerate(value) if not numerics.close(v, 0)]
        if bad:
            return failure("normalization", {"H": zero.to_record(), "block": bad[0], "lhs": value[bad[0]], "rhs": 0}, 1)
        return CheckResult("normalization", "pass-exhaustive", 1, mode=_mode(value))

    def cash_invariance(self) -> CheckResult:
        def case(h, m):
            H, M = self.payoff(h), Payoff.from_blocks(self.g_part, m)
            lhs = _call(self.op, H + M)
            return lhs, _call(self.op, H) + self.g_value(m), {"H": H.to_record(), "m": list(m)}

        return _run("cash_invariance", self.cfg.search(), (self.n, self.k), case)

    def convexity(self) -> list[CheckResult]:
        def scalar_case(h1, h2, lam):
            (lam,) = lam
            H1, H2 = self.payoff(h1), self.payoff(h2)
            lhs = _call(self.op, H1 * lam + H2 * (1 - lam))
            rhs = _call(self.op, H1) * lam + _call(self.op, H2) * (1 - lam)
            return lhs, rhs, {"H1": H1.to_record(), "H2": H2.to_record(), "lambda": lam}

        def g_case(h1, h2, lam):
            H1, H2 = self.payoff(h1), self.payoff(h2)
            L = Payoff.from_blocks(self.g_part, lam)
            lhs = _call(self.op, H1 * L + H2 * (1 - L))
            rhs = _call(self.op, H1) * self.g_value(lam) + _call(self.op, H2) * self.g_value([1 - l for l in lam])
            return lhs, rhs, {"H1": H1.to_record(), "H2": H2.to_record(), "lambda": list(lam)}

        search = self.cfg.search()
        return [
            _run("convexity", search, (self.n, self.n, (1, SCALARS)), scalar_case, "leq"),
            _run("convexity_G", search, (self.n, self.n, (self.k, SCALARS)), g_case, "leq"),
        ]

    def local(self) -> CheckResult:
        def case(selector, h1, h2):
            A = self.g_part.union(i for i, chosen in enumerate(selector) if chosen)
            H1, H2 = self.payoff(h1), self.payoff(h2)
            lhs = _call(self.op, H1.restrict(A) + H2.restrict(set(self.leaves) - A))
            v1, v2 = _call(self.op, H1), _call(self.op, H2)
            rhs = self.g_value([v1[i] if chosen else v2[i] for i, chosen in enumerate(selector)])
            return lhs, rhs, {"A": sorted(A), "H1": H1.to_record(), "H2": H2.to_record()}

        return _run("local", self.cfg.search(), ((self.k, (0, 1)), self.n, self.n), case)

    def monotonicity(self) -> CheckResult:
        def case(h, d):
            H, D = self.payoff(h), self.payoff(d)
            return _call(self.op, H), _call(self.op, H + D), {"H1": H.to_record(), "H2": (H + D).to_record()}

        return _run("monotonicity", self.cfg.search(), (self.n, (self.n, NONNEGATIVE_LATTICE)), case, "leq")

    def positive_homogeneity(self) -> list[CheckResult]:
        def scalar_case(h, lam):
            (lam,) = lam
            H = self.payoff(h)
            return _call(self.op, H * lam), _call(self.op, H) * lam, {"H": H.to_record(), "lambda": lam}

        def g_case(h, lam):
            H = self.payoff(h)
            L = Payoff.from_blocks(self.g_part, lam)
            return _call(self.op, H * L), _call(self.op, H) * self.g_value(lam), {"H": H.to_record(), "lambda": list(lam)}

        search = self.cfg.search()
        return [
            _run("positive_homogeneity", search, (self.n, (1, LOADINGS)), scalar_case),
            _run("positive_homogeneity_G", search, (self.n, (self.k, LOADINGS)), g_case),
        ]

    def market_consistency(self) -> CheckResult:
        cfg = self.cfg
        return is_market_consistent_witness(
            self.op, self.tree, self.g_part, cfg.trials, cfg.seed, lattice=cfg.lattice, exhaustive_limit=cfg.exhaustive_limit
        )

    def market_local(self) -> CheckResult:
        cfg = self.cfg
        lattice = tuple(v for v in cfg.lattice if v >= 0) or NONNEGATIVE_LATTICE
        return market_local_witness(
            self.op, self.tree, self.g_part, cfg.trials, cfg.seed, lattice=lattice, exhaustive_limit=cfg.exhaustive_limit
        )

    def pnorm(self) -> CheckResult:
        """
        `op(H) <= lam * E[|H|^p | G]` under the physical or the risk-neutral measure.
        """
        settings = self.cfg.pnorm
        try:
            p = parse_number(settings["p"])
            lam = settings["lam"]
            lam = [parse_number(v) for v in lam] if isinstance(lam, list) else [parse_number(lam)] * self.k
        except ParsingError as e:
            raise InvalidConfig(f"Could not parse p-norm settings: {e}") from e
        if p < 1 or len(lam) != self.k or any(l < 0 for l in lam):
            raise InvalidConfig(f"p-norm settings need p >= 1 and one nonnegative lam per block of G, not {settings}.")
        measure = settings.get("measure", "P")
        if measure not in ("P", "Q"):
            raise InvalidConfig(f"p-norm measure must be 'P' or 'Q', not '{measure}'.")
        density: Density | None = pricing_measure(self.tree, self.g_part) if measure == "Q" else None

        def case(h):
            H = self.payoff(h)
            moment = cond_expectation(Payoff({l: numerics.power(abs(v), p) for l, v in H.items()}), self.g_part, density)
            return _call(self.op, H), moment * self.g_value(lam), {"H": H.to_record()}

        result = _run("pnorm", self.cfg.search(), (self.n,), case, "leq")
        return replace(result, note=f"p={numerics.to_text(p)}, measure {measure}")


def check_axioms(op, tree: ScenarioTree, g_part: Partition | None = None, cfg: CheckConfig | Mapping | None = None) -> AxiomReport:
    """
    Check the axioms of a conditional evaluation against a black-box oracle.

    The required rows are normalization, cash invariance, convexity with scalar and with
    `G`-measurable weights (`convexity`, `convexity_G`) and the local property. Market
    consistency and the market local property are required when `cfg["market"]` is set and
    optional otherwise. Monotonicity, positive homogeneity with scalar and with
    `G`-measurable factors, and p-norm boundedness (when configured) are optional. The Fatou
    property holds on every finite scenario space and is reported as skipped.

    Args:
        op: the evaluation, an `EvaluationOracle` or a callable on `g_part`.
        tree: the scenario tree.
        g_part: the conditioning partition, the partition of `op` by default.
        cfg: the check settings.

    Returns:
        AxiomReport: one row per property. A failing row carries a witness which reproduces
            the violation when replayed through `op`.

    Raises:
        OracleFailure: if the oracle raises on a lattice payoff.
    """
    cfg = cfg if isinstance(cfg, CheckConfig) else CheckConfig(cfg)
    g_part = initial_partition(tree, g_part if g_part is not None else getattr(op, "partition", None))
    op = as_oracle(op, g_part)
    checks = _Axioms(op, tree, g_part, cfg)
    report = AxiomReport(title=f"axioms of {op.describe()}", seed=cfg.seed)
    for axiom in cfg.axioms:
        if axiom == "pnorm" and cfg.pnorm is None:
            continue
        logger.info("Checking %s of %s", axiom, op.describe())
        results = getattr(checks, axiom)()
        results = results if isinstance(results, list) else [results]
        required = axiom in REQUIRED_AXIOMS or (cfg.market and axiom.startswith("market"))
        report.extend(result if required else result.as_optional() for result in results)
    report.add(CheckResult("fatou", "skipped", required=False, note="structurally satisfied on a finite scenario space"))
    report.mode = FLOAT_MODE if any(result.mode == FLOAT_MODE for result in report) else EXACT_MODE
    if sampled := [result.name for result in report if result.status.startswith("pass-sampled")]:
        warnings.warn(f"Properties {sampled} were checked on samples, not exhaustively.")
    return report
