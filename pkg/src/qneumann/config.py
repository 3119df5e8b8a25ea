"""Pipeline configuration: schema validation, defaults, deterministic JSON.

A config is a single JSON document selecting the boundary maps, the
direction frame, the certificate parameters and the solver problem.
Validation is eager: boundary-map admissibility (nondecreasing slopes,
tail slope below one) is checked at load time, not when a stage first
touches the map.  Schema violations report a JSON-pointer path.

Floating-point output everywhere in this package goes through
:func:`dump_json`, which formats every float with 17 significant digits
so identical inputs produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Any

import numpy as np

from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from .pl1d import PL1D
from .frame import NeumannSpec

__all__ = [
    "ConfigError",
    "PipelineConfig",
    "load_config",
    "pl_from_json",
    "dump_json",
    "fingerprint",
]


class ConfigError(ValueError):
    """Invalid configuration; the message carries a JSON-pointer path."""


_VEC2 = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 2,
    "maxItems": 2,
}

_PL = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["constant"],
            "properties": {"constant": {"type": "number"}},
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["breakpoints", "slopes", "value_at_first_breakpoint"],
            "properties": {
                "breakpoints": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 1,
                },
                "slopes": {"type": "array", "items": {"type": "number"}},
                "value_at_first_breakpoint": {"type": "number"},
            },
        },
    ]
}

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["spec"],
    "properties": {
        "spec": {
            "type": "object",
            "additionalProperties": False,
            "required": ["h1", "h2"],
            "properties": {"h1": _PL, "h2": _PL},
        },
        "frame": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode"],
                    "properties": {"mode": {"const": "search"}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode", "kind"],
                    "properties": {
                        "mode": {"const": "example"},
                        "kind": {"enum": ["homogeneous", "flat_side"]},
                        "params": {
                            "type": "object",
                            "additionalProperties": {"type": "number"},
                        },
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode", "v0", "v1", "v2"],
                    "properties": {
                        "mode": {"const": "explicit"},
                        "v0": _VEC2,
                        "v1": _VEC2,
                        "v2": _VEC2,
                    },
                },
            ]
        },
        "gamma": {
            "oneOf": [
                {"const": "auto"},
                {
                    "type": "number",
                    "exclusiveMinimum": 0,
                    "exclusiveMaximum": 1,
                },
            ]
        },
        "epsilon": {
            "oneOf": [
                {"const": "auto"},
                {"type": "number", "exclusiveMinimum": 0},
            ]
        },
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "psi_radius": {"type": "number", "exclusiveMinimum": 0},
                "psi_n": {"type": "integer", "minimum": 9},
                "dual_n": {"type": "integer", "minimum": 9},
                "window_factor": {"type": "number", "minimum": 1},
                "lambda_samples": {
                    "type": "integer",
                    "minimum": 1,
                    "maximum": 100000,
                },
                "level_curves": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "operator": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "A": {
                            "type": "array",
                            "items": _VEC2,
                            "minItems": 2,
                            "maxItems": 2,
                        },
                        "b": _VEC2,
                        "mu": {"type": "number", "exclusiveMinimum": 0},
                        "g": {
                            "oneOf": [
                                {
                                    "type": "object",
                                    "additionalProperties": False,
                                    "required": ["kind", "value"],
                                    "properties": {
                                        "kind": {"const": "constant"},
                                        "value": {"type": "number"},
                                    },
                                },
                                {
                                    "type": "object",
                                    "additionalProperties": False,
                                    "required": ["kind", "amplitude"],
                                    "properties": {
                                        "kind": {"const": "cos_cos"},
                                        "amplitude": {"type": "number"},
                                    },
                                },
                            ]
                        },
                    },
                },
                "R": {"type": "number", "exclusiveMinimum": 0},
                "n": {"type": "integer", "minimum": 9},
                "far_bc": {"enum": ["sandwich", "dirichlet_zero"]},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "output_dir": {"type": "string"},
    },
}

_DEFAULTS: dict[str, Any] = {
    "frame": {"mode": "search"},
    "gamma": "auto",
    "epsilon": "auto",
    "grids": {
        "psi_radius": 8.0,
        "psi_n": 513,
        "window_factor": 4.0,
        "lambda_samples": 64,
        "level_curves": [0.5, 1.0, 2.0, 4.0],
    },
    "solver": {
        "operator": {
            "A": [[1.0, 0.0], [0.0, 1.0]],
            "b": [0.0, 0.0],
            "mu": 1.0,
            "g": {"kind": "constant", "value": 1.0},
        },
        "R": 16.0,
        "n": 65,
        "far_bc": "sandwich",
        "tol": 1e-10,
        "max_iter": 100000,
    },
}


def pl_from_json(obj: dict, where: str) -> PL1D:
    """Decode a piecewise-linear map from its JSON form.

    Two encodings: ``{"constant": r}`` and ``{"breakpoints": [...],
    "slopes": [...], "value_at_first_breakpoint": r}`` with one slope
    per interval including both tails.
    """
    if "constant" in obj:
        return PL1D((), (0.0,), float(obj["constant"]))
    bps = tuple(float(b) for b in obj["breakpoints"])
    slopes = tuple(float(s) for s in obj["slopes"])
    if len(slopes) != len(bps) + 1:
        raise ConfigError(
            f"{where}/slopes: expected {len(bps) + 1} slopes for "
            f"{len(bps)} breakpoints, got {len(slopes)}"
        )
    try:
        probe = PL1D(bps, slopes, 0.0)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    anchor = float(obj["value_at_first_breakpoint"]) - probe.eval(bps[0])
    return PL1D(bps, slopes, anchor)


def _merge_defaults(raw: dict) -> dict:
    out = json.loads(json.dumps(raw))
    for key, val in _DEFAULTS.items():
        if key not in out:
            out[key] = json.loads(json.dumps(val))
        elif isinstance(val, dict):
            for k2, v2 in val.items():
                if k2 not in out[key]:
                    out[key][k2] = json.loads(json.dumps(v2))
    if "operator" in out.get("solver", {}):
        op_def = _DEFAULTS["solver"]["operator"]
        for k2, v2 in op_def.items():
            if k2 not in out["solver"]["operator"]:
                out["solver"]["operator"][k2] = json.loads(json.dumps(v2))
    return out


def _power_of_two_plus_one(n: int) -> bool:
    m = n - 1
    return m >= 2 and (m & (m - 1)) == 0


@dataclass(frozen=True)
class PipelineConfig:
    """Validated pipeline configuration with defaults filled in."""

    spec: NeumannSpec
    raw: dict = dataclass_field(repr=False)

    @property
    def frame_cfg(self) -> dict:
        return self.raw["frame"]

    @property
    def gamma(self) -> float | str:
        return self.raw["gamma"]

    @property
    def epsilon(self) -> float | str:
        return self.raw["epsilon"]

    @property
    def grids(self) -> dict:
        return self.raw["grids"]

    @property
    def solver(self) -> dict:
        return self.raw["solver"]

    @property
    def output_dir(self) -> str | None:
        return self.raw.get("output_dir")


def load_config(path: str | Path) -> PipelineConfig:
    """Read, validate and default-fill a pipeline config.

    Raises :class:`ConfigError` with a JSON-pointer path on schema
    violations, and eagerly rejects inadmissible boundary maps naming
    the offending slope.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc

    validator = Draft202012Validator(_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = best_match(errors)
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ConfigError(f"{pointer}: {err.message}")

    cfg = _merge_defaults(raw)

    h1 = pl_from_json(cfg["spec"]["h1"], "/spec/h1")
    h2 = pl_from_json(cfg["spec"]["h2"], "/spec/h2")
    try:
        spec = NeumannSpec(h1, h2)
    except ValueError as exc:
        raise ConfigError(f"/spec: {exc}") from exc

    for pointer, n in (
        ("/grids/psi_n", cfg["grids"]["psi_n"]),
        ("/solver/n", cfg["solver"]["n"]),
    ):
        if not _power_of_two_plus_one(int(n)):
            raise ConfigError(
                f"{pointer}: resolution {n} must be a power of two plus one"
            )
    if "dual_n" in cfg["grids"] and not _power_of_two_plus_one(
        int(cfg["grids"]["dual_n"])
    ):
        raise ConfigError(
            f"/grids/dual_n: resolution {cfg['grids']['dual_n']} must be "
            "a power of two plus one"
        )
    return PipelineConfig(spec=spec, raw=cfg)


def _format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("reports must not contain NaN or infinity")
    out = format(x, ".17g")
    # bare "2" would reparse as an integer; keep the float type explicit
    if "e" not in out and "." not in out:
        out += ".0"
    return out


def _serialize(value: Any, indent: int) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(value, np.generic):
        value = value.item()
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _format_float(value)
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        parts = [
            f"{inner}{json.dumps(str(k))}: {_serialize(value[k], indent + 1)}"
            for k in sorted(value, key=str)
        ]
        return "{\n" + ",\n".join(parts) + f"\n{pad}}}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        parts = [f"{inner}{_serialize(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(parts) + f"\n{pad}]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dump_json(value: Any) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    return _serialize(value, 0) + "\n"


def fingerprint(value: Any) -> str:
    import hashlib

    return hashlib.sha256(dump_json(value).encode()).hexdigest()
