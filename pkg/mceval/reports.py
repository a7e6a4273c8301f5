"""
Check results and reports.

Every check operation returns a `Report` (or a single `CheckResult`) rather than raising on a
violated property. A failing result always carries a witness: the serialized inputs which
reproduce the violation when replayed through the same evaluation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import pandas as pd

from mceval.numerics import to_text

logger = logging.getLogger(__name__)

EXACT_MODE = "rational-exact"
FLOAT_MODE = "float-tolerance"

REPORT_COLUMNS = ["axiom", "status", "trials", "witness", "seed", "required", "mode"]


def sampled_status(trials: int) -> str:
    return f"pass-sampled({trials})"


def pass_status(exhaustive: bool, trials: int) -> str:
    return "pass-exhaustive" if exhaustive else sampled_status(trials)


def _serialize(value):
    if isinstance(value, dict):
        return {str(k): _serialize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        return [_serialize(v) for v in value]
    if isinstance(value, (str, bool)) or value is None:
        return value
    try:
        return to_text(value)
    except TypeError:
        return str(value)


@dataclass(frozen=True)
class CheckResult:
    """
    The outcome of checking one property.

    Attributes:
        name: the property checked.
        status: one of `"pass-exhaustive"`, `"pass-sampled(n)"`, `"fail"` or `"skipped"`.
        trials: the number of cases examined.
        witness: for a failure, the inputs reproducing it.
        seed: the generator seed of a sampled check.
        required: whether a failure of this property fails the whole report.
        mode: `"rational-exact"` or `"float-tolerance"`.
        note: free text shown in summaries.
    """

    name: str
    status: str
    trials: int = 0
    witness: dict | None = None
    seed: int | None = None
    required: bool = True
    mode: str = EXACT_MODE
    note: str = ""

    @property
    def failed(self) -> bool:
        return self.status == "fail"

    @property
    def passed(self) -> bool:
        return self.status.startswith("pass")

    @property
    def exhaustive(self) -> bool:
        return self.status == "pass-exhaustive"

    def witness_blob(self) -> str:
        if self.witness is None:
            return ""
        return json.dumps(_serialize(self.witness), sort_keys=True)

    def as_optional(self) -> CheckResult:
        return replace(self, required=False)

    def renamed(self, name: str) -> CheckResult:
        return replace(self, name=name)

    def to_row(self) -> dict:
        return {
            "axiom": self.name,
            "status": self.status,
            "trials": self.trials,
            "witness": self.witness_blob(),
            "seed": "" if self.seed is None else self.seed,
            "required": self.required,
            "mode": self.mode,
        }


class WitnessReport(CheckResult):
    """
    The result of a witness search for a single property.
    """


def failure(name: str, witness: dict, trials: int, seed: int | None = None, **kwargs) -> CheckResult:
    logger.info("Property '%s' failed after %d trials", name, trials)
    return CheckResult(name=name, status="fail", trials=trials, witness=witness, seed=seed, **kwargs)


@dataclass
class Report:
    """
    An ordered collection of `CheckResult` rows.
    """

    title: str = ""
    results: list[CheckResult] = field(default_factory=list)
    seed: int | None = None

    def add(self, result: CheckResult):
        self.results.append(result)
        return result

    def extend(self, results: Iterable[CheckResult]):
        for result in results:
            self.add(result)

    def __iter__(self) -> Iterator[CheckResult]:
        return iter(self.results)

    def __len__(self):
        return len(self.results)

    def __getitem__(self, name: str) -> CheckResult:
        for result in self.results:
            if result.name == name:
                return result
        raise KeyError(f"Report '{self.title}' has no result named '{name}'.")

    def __contains__(self, name: str) -> bool:
        return any(result.name == name for result in self.results)

    @property
    def names(self) -> list[str]:
        return [result.name for result in self.results]

    @property
    def failures(self) -> list[CheckResult]:
        return [result for result in self.results if result.failed]

    @property
    def passed(self) -> bool:
        """
        `True` unless a required result failed.
        """
        return not any(result.failed and result.required for result in self.results)

    def status(self, name: str) -> str:
        return self[name].status

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([result.to_row() for result in self.results], columns=REPORT_COLUMNS)

    def summary(self) -> str:
        lines = [self.title or "report"]
        for result in self.results:
            flag = "" if result.required else " (optional)"
            lines.append(f"  {result.name}: {result.status}{flag}")
            if result.failed:
                lines.append(f"    witness: {result.witness_blob()}")
            if result.note:
                lines.append(f"    {result.note}")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)

    def to_csv(self, path: str | Path, summary: bool = True):
        """
        Write the report as CSV, and a plain text summary next to it as `<path>.txt`.
        """
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        if summary:
            path.with_name(path.name + ".txt").write_text(self.summary() + "\n")
        logger.info("Wrote report '%s' to %s", self.title, path)

    @classmethod
    def from_csv(cls, path: str | Path) -> Report:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        missing = {"axiom", "status"} - set(frame.columns)
        if missing:
            raise KeyError(f"Report file {path} is missing columns {missing}")
        report = cls(title=str(path))
        for row in frame.to_dict("records"):
            witness = json.loads(row["witness"]) if row.get("witness") else None
            report.add(
                CheckResult(
                    name=row["axiom"],
                    status=row["status"],
                    trials=int(row.get("trials") or 0),
                    witness=witness,
                    seed=int(row["seed"]) if row.get("seed") else None,
                    required=row.get("required", "True") != "False",
                    mode=row.get("mode") or EXACT_MODE,
                )
            )
        return report


@dataclass
class AxiomReport(Report):
    """
    The report of `check_axioms`: one row per axiom, plus the numeric mode of the run.
    """

    mode: str = EXACT_MODE

    @property
    def statuses(self) -> dict[str, str]:
        return {result.name: result.status for result in self.results}
