"""JSON market configs: strict schema, loading, writing and tree construction."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": _NUM}}

_NODE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["id", "price"],
    "properties": {
        "id": {"type": ["string", "integer"]},
        "price": _NUM,
        "children": {"type": "array", "items": {"type": ["string", "integer"]}},
        "probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}

_GBM = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "mu", "sigma", "s0", "t_real"],
    "properties": {
        "model": {"const": "geometric-brownian"},
        "mu": _NUM, "sigma": _POS, "s0": _POS, "t_real": _POS,
    },
}

_MULT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "s0", "u", "d", "p_up"],
    "properties": {
        "model": {"const": "multiplicative"},
        "s0": _POS, "u": _POS, "d": _POS,
        "p_up": {"type": "number", "minimum": 0, "maximum": 1},
    },
}

_REGIME = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "sigma", "s0", "t_real", "drifts"],
    "properties": {
        "model": {"const": "regime-switching-drift"},
        "sigma": _POS, "s0": _POS, "t_real": _POS,
        "drifts": {"type": "array", "minItems": 1, "items": _NUM},
        "transition": _MATRIX,
        "transition_down": _MATRIX,
        "rates": _MATRIX,
        "initial_regime": {"type": "integer", "minimum": 0},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "horizon"],
    "properties": {
        "kind": {"enum": ["explicit-tree", "binomial", "regime"]},
        "horizon": {"type": "integer", "minimum": 1},
        "recombining": {"type": "boolean"},
        "nodes": {"type": "array", "minItems": 1, "items": _NODE},
        "spec": {"type": "object"},
        "gamma": _POS,
        "x": _NUM,
        "n_list": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "explicit-tree"}}},
         "then": {"required": ["nodes"], "not": {"required": ["spec"]}}},
        {"if": {"properties": {"kind": {"enum": ["binomial", "regime"]}}},
         "then": {"required": ["spec"], "not": {"required": ["nodes"]}}},
    ],
}

# model schemas allowed under "spec" for each kind
SPEC_SCHEMAS = {
    "binomial": {"geometric-brownian": _GBM, "multiplicative": _MULT},
    "regime": {"regime-switching-drift": _REGIME},
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _raise_first(validator, doc, prefix=()):
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if not errors:
        return
    err = errors[0]
    path = "/".join(str(p) for p in (*prefix, *err.absolute_path)) or "<root>"
    msg = err.message
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        msg = f"unknown key(s) {', '.join(map(repr, extra))}"
    elif err.validator == "not":
        msg = "'nodes' and 'spec' are mutually exclusive"
    raise ConfigError(f"config error at {path}: {msg}")


def validate_config(doc) -> dict:
    """Validate against the schema; messages name the offending key path."""
    _raise_first(_VALIDATOR, doc)
    if "spec" in doc:
        allowed = SPEC_SCHEMAS[doc["kind"]]
        model = doc["spec"].get("model")
        if model not in allowed:
            raise ConfigError(f"config error at spec/model: expected one of {sorted(allowed)}, "
                              f"got {model!r}")
        _raise_first(jsonschema.Draft202012Validator(allowed[model]), doc["spec"], ("spec",))
    return doc


def load_config(path) -> dict:
    data = Path(path).read_bytes()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    return validate_config(doc)


def dump_config(doc: dict, path) -> None:
    validate_config(doc)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def spec_from_config(doc: dict):
    """ContinuousModelSpec for a binomial/regime config (None for the multiplicative model)."""
    from .market_tree import ContinuousModelSpec

    sp = doc["spec"]
    model = sp["model"]
    if model == "multiplicative":
        return None
    if model == "geometric-brownian":
        return ContinuousModelSpec("geometric-brownian", sp["sigma"], sp["s0"], sp["t_real"],
                                   mu=sp["mu"])

    def mat(key):
        v = sp.get(key)
        return None if v is None else tuple(tuple(float(a) for a in row) for row in v)

    return ContinuousModelSpec(
        "regime-switching-drift", sp["sigma"], sp["s0"], sp["t_real"],
        drifts=tuple(float(d) for d in sp["drifts"]),
        transition=mat("transition"), transition_down=mat("transition_down"), rates=mat("rates"),
        initial_regime=int(sp.get("initial_regime", 0)),
    )
