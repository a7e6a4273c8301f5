"""
Loading of configuration files: trees, payoffs, principles, check settings and grid models.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import pandas as pd

from mceval.bsde.grid import GridModel
from mceval.evaluate.principles import PrincipleSpec
from mceval.model import payoffs
from mceval.model.errors import InvalidConfig
from mceval.model.tree import ScenarioTree, TreeConfig, build_tree
from mceval.model.values import Payoff

from .axioms import CheckConfig

logger = logging.getLogger(__name__)


def load_tree(path: str | Path) -> ScenarioTree:
    tree = build_tree(TreeConfig.from_file(path))
    logger.info("Loaded tree with %d leaves from %s", len(tree.leaves), path)
    return tree


def read_payoff(path: str | Path, tree: ScenarioTree) -> Payoff:
    """
    Read a payoff from a CSV file with columns `leaf,value`, or from a JSON object
    `{leaf_id: value}`.

    Raises:
        InvalidConfig: if the file is malformed or does not match the leaves of `tree`.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        try:
            table = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"Payoff file {path} is not valid JSON: {e}") from e
        if not isinstance(table, dict):
            raise InvalidConfig(f"Payoff file {path} must hold a JSON object.")
    else:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        if missing := {"leaf", "value"} - set(frame.columns):
            raise InvalidConfig(f"Payoff file {path} is missing columns {missing}")
        if frame["leaf"].duplicated().any():
            raise InvalidConfig(f"Payoff file {path} lists a leaf twice.")
        table = dict(zip(frame["leaf"], frame["value"]))
    return payoffs.from_table(tree, table)


def parse_principle(text: str) -> PrincipleSpec:
    """
    A principle from `kind:name=value,...` text, a JSON object, or the path of a JSON file
    holding such an object.
    """
    path = Path(text)
    if text.endswith(".json") and path.is_file():
        text = path.read_text()
    return PrincipleSpec.parse(text)


def load_check_config(path: str | Path | None = None, **overrides) -> CheckConfig:
    """
    Check settings from a JSON file, with keyword `overrides` taking precedence. Overrides
    equal to `None` are ignored.
    """
    data = dict(CheckConfig.from_file(path)) if path is not None else {}
    return CheckConfig(data, **overrides)


def load_grid_model(path: str | Path) -> GridModel:
    return GridModel.from_file(path)
