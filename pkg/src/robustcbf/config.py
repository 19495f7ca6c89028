"""Experiment configuration: JSON schema, semantic checks and parsed form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .filters import RCbfParams
from .sim import CorruptionModel, FilterSpec, Setup
from .systems import BENCHMARKS, SegwayParams, get_benchmark
from .uncertainty import DEFAULT_SEED, ErrorSet


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_NONNEG = {"type": "number", "minimum": 0}
_LABEL = {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"}

FILTER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["standard", "r_cbf", "mr_cbf", "duality", "decoupled"]},
        "label": _LABEL,
        "gamma1": _NONNEG,
        "gamma2": _NONNEG,
        "overapprox": {"enum": ["polytope", "ellipsoid"]},
        "directions": {"type": "integer", "minimum": 3},
        "samples": {"type": "integer", "minimum": 2},
        "margin": _NONNEG,
        "sample_mode": {"enum": ["random", "boundary"]},
        "support_method": {"enum": ["auto", "exact", "grid"]},
        "lipschitz_resolution": {"type": "integer", "minimum": 2},
    },
}

DESIRED_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["type"], "properties": {"type": {"const": "zero"}}},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "value"],
            "properties": {"type": {"const": "constant"}, "value": _VEC},
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "gain"],
            "properties": {"type": {"const": "linear"}, "gain": {"type": "array", "items": _VEC, "minItems": 1}},
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "Q", "R"],
            "properties": {
                "type": {"const": "lqr"},
                "Q": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "R": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
            },
        },
    ]
}

CORRUPTION_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["type"],
    "properties": {
        "type": {"enum": ["none", "random", "adversarial", "fixed"]},
        "seed": {"type": "integer", "minimum": 0},
        "resolution": {"type": "integer", "minimum": 2},
        "offset": _VEC,
    },
}

UNCERTAINTY_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "half_widths"],
            "properties": {"type": {"const": "box"}, "half_widths": {"type": "array", "items": _NONNEG, "minItems": 1}},
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "radius"],
            "properties": {"type": {"const": "ball"}, "radius": _NONNEG},
        },
    ]
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "robustcbf experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["benchmark", "mode", "filters"],
    "properties": {
        "name": _LABEL,
        "mode": {"enum": ["static", "simulate", "sweep"]},
        "benchmark": {"enum": sorted(BENCHMARKS)},
        "benchmark_params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {f.name: _NUM for f in fields(SegwayParams)},
        },
        "x0": _VEC,
        "x_hat": _VEC,
        "k_d": _VEC,
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "substeps": {"type": "integer", "minimum": 1},
        "desired": DESIRED_SCHEMA,
        "corruption": CORRUPTION_SCHEMA,
        "uncertainty": UNCERTAINTY_SCHEMA,
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "magnitudes"],
            "properties": {
                "kind": {"enum": ["box", "ball"]},
                "magnitudes": {"type": "array", "items": _NONNEG, "minItems": 1},
            },
        },
        "filters": {"type": "array", "items": FILTER_SCHEMA, "minItems": 1},
        "input_bounds": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
        "seed": {"type": "integer", "minimum": 0},
        "record_timing": {"type": "boolean"},
        "write_trajectories": {"type": "boolean"},
    },
    "allOf": [
        {"if": {"properties": {"mode": {"const": "static"}}}, "then": {"required": ["x_hat", "k_d", "uncertainty"]}},
        {"if": {"properties": {"mode": {"const": "simulate"}}}, "then": {"required": ["x0", "uncertainty"]}},
        {"if": {"properties": {"mode": {"const": "sweep"}}}, "then": {"required": ["x0", "sweep"]}},
    ],
}


@dataclass
class ExperimentConfig:
    name: str
    mode: str
    benchmark: str
    filters: list
    raw: dict = field(repr=False)
    benchmark_params: dict = field(default_factory=dict)
    x0: np.ndarray | None = None
    x_hat: np.ndarray | None = None
    k_d: np.ndarray | None = None
    error_set: ErrorSet | None = None
    magnitudes: list | None = None
    sweep_kind: str = "box"
    setup: Setup | None = None
    input_bounds: np.ndarray | None = None
    seed: int = DEFAULT_SEED
    record_timing: bool = True
    write_trajectories: bool = True

    def system(self):
        return get_benchmark(self.benchmark, **self.benchmark_params)


def _filter_spec(d: dict, seed: int) -> FilterSpec:
    kw = {k: d[k] for k in ("overapprox", "directions", "samples", "margin", "sample_mode", "support_method", "lipschitz_resolution") if k in d}
    r = RCbfParams(d.get("gamma1", RCbfParams.gamma1), d.get("gamma2", RCbfParams.gamma2))
    return FilterSpec(kind=d["kind"], label=d.get("label", d["kind"]), r_cbf=r, seed=seed, **kw)


def _error_set(d: dict, n: int) -> ErrorSet:
    if d["type"] == "box":
        if len(d["half_widths"]) != n:
            raise ConfigError(f"uncertainty half_widths must have {n} entries")
        return ErrorSet.box(d["half_widths"])
    return ErrorSet.ball(d["radius"], n)


def _corruption(d: dict | None, seed: int) -> CorruptionModel:
    if d is None:
        return CorruptionModel.adversarial()
    kind = d["type"]
    if kind == "fixed":
        if "offset" not in d:
            raise ConfigError("fixed corruption needs an offset")
        return CorruptionModel.fixed_offset(d["offset"])
    return CorruptionModel(kind, seed=d.get("seed", seed), resolution=d.get("resolution", 21))


def parse_config(doc: dict, seed: int | None = None) -> ExperimentConfig:
    """Validate a configuration document and build the experiment objects.

    ``seed`` overrides the document's seed. Raises ConfigError on any problem.
    """
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    seed = doc.get("seed", DEFAULT_SEED) if seed is None else seed
    if doc.get("benchmark_params") and doc["benchmark"] != "segway":
        raise ConfigError(f"benchmark {doc['benchmark']!r} takes no parameters")
    try:
        system, _ = get_benchmark(doc["benchmark"], **doc.get("benchmark_params", {}))
        n, m = system.state_dim, system.input_dim
        filters = [_filter_spec(f, seed) for f in doc["filters"]]
        labels = [f.label for f in filters]
        if len(set(labels)) != len(labels):
            raise ConfigError("filter labels must be unique")
        cfg = ExperimentConfig(
            name=doc.get("name", doc["mode"]),
            mode=doc["mode"],
            benchmark=doc["benchmark"],
            filters=filters,
            raw=doc,
            benchmark_params=doc.get("benchmark_params", {}),
            seed=seed,
            record_timing=doc.get("record_timing", True),
            write_trajectories=doc.get("write_trajectories", True),
        )
        if "input_bounds" in doc:
            b = np.asarray(doc["input_bounds"], dtype=float)
            if b.shape != (m, 2) or np.any(b[:, 0] > b[:, 1]):
                raise ConfigError(f"input_bounds must be {m} ordered [low, high] pairs")
            cfg.input_bounds = b
        if "uncertainty" in doc:
            cfg.error_set = _error_set(doc["uncertainty"], n)
        for key in ("x0", "x_hat"):
            if key in doc:
                v = np.asarray(doc[key], dtype=float)
                if v.size != n:
                    raise ConfigError(f"{key} must have {n} entries")
                if not system.in_domain(v):
                    raise ConfigError(f"{key} lies outside the {doc['benchmark']} domain")
                setattr(cfg, key, v)
        if "k_d" in doc:
            if len(doc["k_d"]) != m:
                raise ConfigError(f"k_d must have {m} entries")
            cfg.k_d = np.asarray(doc["k_d"], dtype=float)
        if cfg.mode == "static":
            hw = cfg.error_set.bounding_half_widths
            if not np.all(system.in_domain(np.stack([cfg.x_hat - hw, cfg.x_hat + hw]))):
                raise ConfigError("x_hat plus the error set leaves the benchmark domain")
            return cfg
        desired = doc.get("desired", {"type": "zero"})
        if desired["type"] == "constant" and len(desired["value"]) != m:
            raise ConfigError(f"desired value must have {m} entries")
        if desired["type"] == "linear" and np.asarray(desired["gain"]).shape != (m, n):
            raise ConfigError(f"desired gain must be {m} x {n}")
        if desired["type"] == "lqr" and (len(desired["Q"]) != n or len(desired["R"]) != m):
            raise ConfigError(f"LQR weights must have {n} and {m} diagonal entries")
        corruption = _corruption(doc.get("corruption"), seed)
        if corruption.offset is not None:
            e0 = np.asarray(corruption.offset)
            sets = [cfg.error_set] if cfg.error_set is not None else []
            if e0.size != n or any(not s.contains(e0[None, :])[0] for s in sets):
                raise ConfigError("fixed corruption offset must lie in the error set")
        if cfg.mode == "sweep":
            mags = [float(v) for v in doc["sweep"]["magnitudes"]]
            if mags != sorted(mags):
                raise ConfigError("sweep magnitudes must be ascending")
            cfg.magnitudes = mags
            cfg.sweep_kind = doc["sweep"]["kind"]
        cfg.setup = Setup(
            benchmark=cfg.benchmark,
            x0=tuple(cfg.x0.tolist()),
            dt=doc.get("dt", 1e-3),
            horizon=doc.get("horizon", 5.0),
            substeps=doc.get("substeps", 1),
            desired=desired,
            corruption=corruption,
            error_kind=cfg.sweep_kind,
            input_bounds=None if cfg.input_bounds is None else tuple(map(tuple, cfg.input_bounds.tolist())),
            benchmark_params=cfg.benchmark_params,
            timing=cfg.record_timing,
        )
        # catches e.g. an LQR design that has no stabilizing solution
        from .sim import desired_policy

        desired_policy(desired, system)
    except ConfigError:
        raise
    except (ValueError, TypeError, np.linalg.LinAlgError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(doc, seed)


PINNED = ("example1", "example2", "example3")


def pinned_config(name: str) -> dict:
    """Built-in configuration for a named example."""
    if name not in PINNED:
        raise ConfigError(f"unknown example {name!r}; choose from {', '.join(PINNED)}")
    return json.loads(resources.files("robustcbf").joinpath("configs", f"{name}.json").read_text(encoding="utf-8"))
