"""Model and policy file formats.

Model file (JSON)::

    {
      "name": "maintenance",
      "states": ["good", "worn"],
      "actions": {"good": ["run", "inspect"], "worn": ["repair", "continue"]},
      "transition": {"good": {"run": {"good": 0.6, "worn": 0.4}, ...}, ...},
      "sojourn": {"good": {"run": {"kind": "weibull", "shape": 2, "scale": 1.5}, ...}, ...},
      "cost": {"good": {"run": 0.3, ...}, ...},
      "c_bar": 1.0,
      "alpha": 0.5,
      "utility": {"kind": "exponential", "gamma": 1.0}
    }

Transition rows may omit zero-probability destinations. A sojourn entry is
either one law (shared by every destination) or a mapping destination ->
law. Law kinds: exponential(rate), uniform(lo, hi), weibull(shape, scale),
deterministic(s0), mixture(components, weights).

Policy file (JSON): {"header": {...}, "kind": "stationary" | "markov",
"grid": {"w_nodes": [...], "lam_nodes": [...], "lam_reach": R, "w_shift": c}, "tables": [choice, ...]}
where each choice is a nested [state][w][lam] list of action indices; a
markov file lists tables in jump order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from smdp_risk.bellman import PolicyTable
from smdp_risk.model import SmdpModel, sojourn_from_dict
from smdp_risk.numerics import AugGrid
from smdp_risk.utility import Utility

FIXTURE_DIR = Path(__file__).parent / "data"


class ModelFileError(ValueError):
    """Malformed model or policy file; the message names the JSON path."""


def _require(d, key, path):
    if not isinstance(d, dict):
        raise ModelFileError(f"{path}: expected an object")
    if key not in d:
        raise ModelFileError(f"{path}: missing key {key!r}")
    return d[key]


def _number(x, path) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ModelFileError(f"{path}: expected a number, got {x!r}")
    return float(x)


def model_from_dict(doc: dict) -> Tuple[SmdpModel, Optional[Utility]]:
    states = _require(doc, "states", "$")
    if not isinstance(states, list) or not states:
        raise ModelFileError("$.states: expected a nonempty list")
    states = [str(s) for s in states]
    index = {s: k for k, s in enumerate(states)}
    acts_doc = _require(doc, "actions", "$")
    trans_doc = _require(doc, "transition", "$")
    soj_doc = _require(doc, "sojourn", "$")
    cost_doc = _require(doc, "cost", "$")
    actions, transition, sojourn, cost = [], [], [], []
    for s in states:
        acts = _require(acts_doc, s, "$.actions")
        if not isinstance(acts, list):
            raise ModelFileError(f"$.actions.{s}: expected a list")
        acts = [str(a) for a in acts]
        P = np.zeros((len(acts), len(states)))
        laws_i, cost_i = [], []
        for a_idx, a in enumerate(acts):
            row = _require(_require(trans_doc, s, "$.transition"), a, f"$.transition.{s}")
            if not isinstance(row, dict):
                raise ModelFileError(f"$.transition.{s}.{a}: expected a mapping state -> probability")
            for dest, prob in row.items():
                if dest not in index:
                    raise ModelFileError(f"$.transition.{s}.{a}: unknown state {dest!r}")
                P[a_idx, index[dest]] = _number(prob, f"$.transition.{s}.{a}.{dest}")
            entry = _require(_require(soj_doc, s, "$.sojourn"), a, f"$.sojourn.{s}")
            where = f"$.sojourn.{s}.{a}"
            try:
                if isinstance(entry, dict) and "kind" in entry:
                    law = sojourn_from_dict(entry)
                    laws = [law if P[a_idx, j] > 0 else None for j in range(len(states))]
                elif isinstance(entry, dict):
                    laws = [None] * len(states)
                    for dest, d in entry.items():
                        if dest not in index:
                            raise ModelFileError(f"{where}: unknown state {dest!r}")
                        laws[index[dest]] = sojourn_from_dict(d)
                else:
                    raise ModelFileError(f"{where}: expected a law or a mapping state -> law")
            except (TypeError, KeyError, ValueError) as exc:
                if isinstance(exc, ModelFileError):
                    raise
                raise ModelFileError(f"{where}: {exc}") from exc
            laws_i.append(tuple(laws))
            cost_i.append(_number(_require(_require(cost_doc, s, "$.cost"), a, f"$.cost.{s}"), f"$.cost.{s}.{a}"))
        actions.append(tuple(acts))
        transition.append(P)
        sojourn.append(tuple(laws_i))
        cost.append(np.array(cost_i))
    model = SmdpModel(
        states=tuple(states),
        actions=tuple(actions),
        transition=tuple(transition),
        sojourn=tuple(sojourn),
        cost=tuple(cost),
        c_bar=_number(_require(doc, "c_bar", "$"), "$.c_bar"),
        alpha=_number(_require(doc, "alpha", "$"), "$.alpha"),
        name=str(doc.get("name", "model")),
    )
    utility = None
    if "utility" in doc:
        try:
            utility = Utility.from_dict(doc["utility"])
        except (TypeError, KeyError, ValueError) as exc:
            raise ModelFileError(f"$.utility: {exc}") from exc
    return model, utility


def model_to_dict(model: SmdpModel, utility: Optional[Utility] = None) -> dict:
    doc = {"name": model.name, "states": list(model.states), "actions": {}, "transition": {}, "sojourn": {}, "cost": {}}
    for i, s in enumerate(model.states):
        doc["actions"][s] = list(model.actions[i])
        doc["transition"][s] = {}
        doc["sojourn"][s] = {}
        doc["cost"][s] = {}
        for a, act in enumerate(model.actions[i]):
            row = model.transition[i][a]
            doc["transition"][s][act] = {model.states[j]: float(row[j]) for j in range(model.n_states) if row[j] > 0}
            doc["sojourn"][s][act] = {
                model.states[j]: model.sojourn[i][a][j].to_dict()
                for j in range(model.n_states)
                if model.sojourn[i][a][j] is not None
            }
            doc["cost"][s][act] = float(model.cost[i][a])
    doc["c_bar"] = model.c_bar
    doc["alpha"] = model.alpha
    if utility is not None:
        doc["utility"] = utility.to_dict()
    return doc


def load_model(path) -> Tuple[SmdpModel, Optional[Utility]]:
    """Parse a model file; raises OSError or ModelFileError (with line/path)."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return model_from_dict(doc)
    except ModelFileError as exc:
        raise ModelFileError(f"{path}: {exc}") from exc


def fixture_path(name: str = "maintenance") -> Path:
    return FIXTURE_DIR / f"{name}.json"


def load_fixture(name: str = "maintenance") -> Tuple[SmdpModel, Optional[Utility]]:
    return load_model(fixture_path(name))


def model_hash(model: SmdpModel, utility: Optional[Utility] = None) -> str:
    canon = json.dumps(model_to_dict(model, utility), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_policy(path, tables: List[PolicyTable], kind: str, header: dict) -> None:
    if kind not in ("stationary", "markov"):
        raise ValueError("policy kind must be 'stationary' or 'markov'")
    grid = tables[0].grid
    doc = {
        "header": header,
        "kind": kind,
        "grid": grid.to_dict(),
        "tables": [t.choice.tolist() for t in tables],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def read_policy(path) -> Tuple[str, List[PolicyTable], dict]:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        kind = _require(doc, "kind", "$")
        g = _require(doc, "grid", "$")
        _require(g, "w_nodes", "$.grid")
        _require(g, "lam_nodes", "$.grid")
        grid = AugGrid.from_dict(g)
        tables = [PolicyTable(grid, np.array(t)) for t in _require(doc, "tables", "$")]
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"{path}: {exc}") from exc
    if kind not in ("stationary", "markov") or not tables:
        raise ModelFileError(f"{path}: $.kind must be 'stationary' or 'markov' with at least one table")
    return kind, tables, doc.get("header", {})
