"""JSON scenario files.

Top-level keys: ``agents`` (list of ``{role, types, names?}``), ``discount``,
``values`` (``{"parametric": {k1, k2, k3}}`` or ``{"tables": {agent: {mask:
[value per profile]}}}``), ``transitions`` (one object per agent mapping
``"mask,type"`` to a probability row; ``"*,type"`` is the fallback for masks
not listed), and optionally ``world``, ``feasible``, ``const_payment``, ``name``.
"""

from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path

import numpy as np

from mechsim.model import Scenario, ValueParams, WorldModel, parametric_values


class ScenarioFormatError(ValueError):
    """The file is not valid JSON or does not follow the scenario schema."""


def _require(doc: dict, key: str, where: str = "scenario"):
    if key not in doc:
        raise ScenarioFormatError(f"{where}: missing key {key!r}")
    return doc[key]


def _parse_kernel(spec: dict, agent: int, n_masks: int, n_types: int) -> np.ndarray:
    if not isinstance(spec, dict):
        raise ScenarioFormatError(f"transitions[{agent}] must be an object")
    kern = np.full((n_masks, n_types, n_types), np.nan)
    fallback = {}
    for key, row in spec.items():
        try:
            m_s, k_s = (part.strip() for part in key.split(","))
            k = int(k_s)
            row = [float(x) for x in row]
        except (ValueError, TypeError):
            raise ScenarioFormatError(
                f"transitions[{agent}]: bad entry {key!r}; expected \"mask,type\": [probabilities]"
            ) from None
        if len(row) != n_types or not 0 <= k < n_types:
            raise ScenarioFormatError(f"transitions[{agent}][{key!r}]: wrong row length or type")
        if m_s == "*":
            fallback[k] = row
            continue
        m = int(m_s)
        if not 0 <= m < n_masks:
            raise ScenarioFormatError(f"transitions[{agent}][{key!r}]: mask out of range")
        kern[m, k] = row
    for m in range(n_masks):
        for k in range(n_types):
            if np.isnan(kern[m, k, 0]):
                if k not in fallback:
                    raise ScenarioFormatError(
                        f"transitions[{agent}]: no row for allocation {m}, type {k}"
                    )
                kern[m, k] = fallback[k]
    return kern


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        return _build(doc)
    except ScenarioFormatError:
        raise
    except (TypeError, AttributeError, KeyError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc}") from None


def _build(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioFormatError("scenario must be a JSON object")
    agents = _require(doc, "agents")
    if not isinstance(agents, list) or not agents:
        raise ScenarioFormatError("agents must be a non-empty list")
    labels, names, roles = [], [], []
    for idx, a in enumerate(agents):
        where = f"agents[{idx}]"
        roles.append(str(_require(a, "role", where)))
        types = _require(a, "types", where)
        labels.append([float(x) for x in types])
        names.append([str(x) for x in a.get("names", range(len(types)))])
    n = len(agents)
    n_masks = 1 << n
    shape = [len(t) for t in labels]
    n_profiles = int(np.prod(shape))

    values_doc = _require(doc, "values")
    params = None
    if "parametric" in values_doc:
        pd = values_doc["parametric"]
        params = ValueParams(*(float(_require(pd, k, "values.parametric")) for k in ("k1", "k2", "k3")))
        values = parametric_values(labels, roles, params)
    elif "tables" in values_doc:
        values = np.zeros((n, n_masks, n_profiles))
        for agent_s, by_mask in values_doc["tables"].items():
            i = int(agent_s)
            for mask_s, row in by_mask.items():
                m = int(mask_s)
                if len(row) != n_profiles:
                    raise ScenarioFormatError(
                        f"values.tables[{i}][{m}]: expected {n_profiles} entries"
                    )
                values[i, m] = [float(x) for x in row]
    else:
        raise ScenarioFormatError("values must contain 'parametric' or 'tables'")

    trans = _require(doc, "transitions")
    if not isinstance(trans, list) or len(trans) != n:
        raise ScenarioFormatError(f"transitions must be a list with {n} entries")
    kernels = [_parse_kernel(trans[i], i, n_masks, shape[i]) for i in range(n)]

    world = WorldModel.degenerate()
    if "world" in doc and doc["world"] is not None:
        omegas = _require(doc["world"], "omegas", "world")
        weights = [float(_require(o, "weight", "world.omegas")) for o in omegas]
        eps = [[float(x) for x in o.get("eps", [0.0] * n)] for o in omegas]
        if any(len(e) != n for e in eps):
            raise ScenarioFormatError(f"world.omegas[].eps must have {n} entries")
        world = WorldModel(weights=weights, eps=np.array(eps))

    try:
        return Scenario(
            type_labels=labels,
            type_names=names,
            roles=roles,
            values=values,
            kernels=kernels,
            discount=float(_require(doc, "discount")),
            world=world,
            feasible=doc.get("feasible"),
            const_payment=None if doc.get("const_payment") is None else float(doc["const_payment"]),
            value_params=params,
            name=str(doc.get("name", "")),
        )
    except ValueError as exc:
        raise ScenarioFormatError(str(exc)) from None


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    return scenario_from_dict(doc)


def scenario_to_dict(s: Scenario) -> dict:
    """Serialize with explicit tables (round-trips through ``scenario_from_dict``)."""
    n = s.n_agents
    doc: dict = {"name": s.name}
    doc["agents"] = [
        {"role": s.roles[i], "types": list(s.type_labels[i]), "names": list(s.type_names[i])}
        for i in range(n)
    ]
    doc["discount"] = s.discount
    if s.value_params is not None:
        p = s.value_params
        doc["values"] = {"parametric": {"k1": p.k1, "k2": p.k2, "k3": p.k3}}
    else:
        doc["values"] = {"tables": {
            str(i): {str(m): s.values[i, m].tolist() for m in range(1 << n) if (m >> i) & 1}
            for i in range(n)
        }}
    doc["transitions"] = [
        {f"{m},{k}": s.kernels[i][m, k].tolist()
         for m in range(1 << n) for k in range(s.shape[i])}
        for i in range(n)
    ]
    if s.world.table is not None:
        raise ValueError("explicit realized-value tables cannot be written to a scenario file")
    if not s.world.is_degenerate:
        eps = s.world.eps if s.world.eps is not None else np.zeros((s.world.size, n))
        doc["world"] = {"omegas": [
            {"weight": float(w), "eps": eps[k].tolist()} for k, w in enumerate(s.world.weights)
        ]}
    if s.feasible is not None:
        doc["feasible"] = list(s.feasible)
    if s.const_payment is not None:
        doc["const_payment"] = s.const_payment
    return doc


def dumps(doc: dict) -> str:
    """Indented JSON with flat lists kept on one line."""
    text = json.dumps(doc, indent=1)
    return re.sub(
        r"\[\s+([^\[\]{}]*?)\s+\]",
        lambda m: "[" + ", ".join(x.strip() for x in m.group(1).split(",")) + "]",
        text,
    ) + "\n"


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps(scenario_to_dict(s)))


def golden_path():
    return resources.files("mechsim") / "data" / "golden.json"
