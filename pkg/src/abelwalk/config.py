"""Experiment configuration: schema, presets, and object construction.

Configs are YAML (JSON is valid YAML).  A config names a group, a family of
step measures, a schedule rule, an observable, a start point, run parameters
and a root seed.  Presets are complete configs; a user config is deep-merged
over a preset when both are given.
"""
from __future__ import annotations

import copy
import math
from fractions import Fraction

import jsonschema
import yaml

from .groups import Group, PAdicInt, Torus, group_from_config
from .measures import AtomicMeasure, dirac, from_pairs, uniform
from .walk import CYCLIC, EXPLICIT, SEEDED_CHOICE, Observable, WalkSchedule

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ConfigError(ValueError):
    """The configuration is malformed or inconsistent."""


_number = {"type": "number"}
_weight = {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                     {"type": "string", "pattern": r"^\s*\d+\s*(/\s*\d+\s*)?$"}]}
_coords = {"type": "array", "items": _number, "minItems": 1}

_measure = {
    "oneOf": [
        {"type": "object", "required": ["atoms"], "additionalProperties": False,
         "properties": {"atoms": {"type": "array", "minItems": 1,
                                  "items": {"type": "array", "prefixItems": [_coords, _weight],
                                            "minItems": 2, "maxItems": 2}}}},
        {"type": "object", "required": ["preset"], "additionalProperties": False,
         "properties": {"preset": {"enum": ["uniform", "dirac", "lazy-step"]},
                        "at": _coords}},
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["group"],
    "properties": {
        "description": {"type": "string"},
        "group": {
            "oneOf": [
                {"type": "object", "required": ["finite"], "additionalProperties": False,
                 "properties": {"finite": {"type": "array", "minItems": 1,
                                           "items": {"type": "integer", "minimum": 2}}}},
                {"type": "object", "required": ["torus"], "additionalProperties": False,
                 "properties": {"torus": {"type": "integer", "minimum": 1}}},
                {"type": "object", "required": ["cantor"], "additionalProperties": False,
                 "properties": {"cantor": {"type": "integer", "minimum": 1}}},
                {"type": "object", "required": ["padic"], "additionalProperties": False,
                 "properties": {"padic": {
                     "type": "object", "required": ["p", "depth"], "additionalProperties": False,
                     "properties": {"p": {"type": "integer", "minimum": 2},
                                    "depth": {"type": "integer", "minimum": 1}}}}},
            ]
        },
        "family": {"type": "array", "minItems": 1, "items": _measure},
        "irrational": {"type": "array", "items": {"type": "boolean"}},
        "schedule": {
            "type": "object", "additionalProperties": False, "required": ["rule"],
            "properties": {
                "rule": {"enum": [EXPLICIT, CYCLIC, SEEDED_CHOICE]},
                "indices": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "observable": {
            "oneOf": [
                {"type": "object", "required": ["character"], "additionalProperties": False,
                 "properties": {"character": {"type": "array", "minItems": 1, "items": {"type": "integer"}}}},
                {"type": "object", "required": ["table"], "additionalProperties": False,
                 "properties": {"table": {"type": "array", "minItems": 1, "items": _number}}},
                {"type": "object", "required": ["lipschitz_box"], "additionalProperties": False,
                 "properties": {"lipschitz_box": {
                     "type": "object", "required": ["lo", "hi", "lipschitz"], "additionalProperties": False,
                     "properties": {"lo": _coords, "hi": _coords,
                                    "lipschitz": {"type": "number", "exclusiveMinimum": 0}}}}},
            ]
        },
        "start": _coords,
        "initial": _measure,
        "scenario": {"enum": ["dirac-rotation", "shrinking-support"]},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "run": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "n_grid": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
                "trials": {"type": "integer", "minimum": 1},
                "ld_trials": {"type": "integer", "minimum": 100},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "grid_n": {"type": "integer", "minimum": 2},
                "atom_cap": {"type": "integer", "minimum": 1},
                "m_cap": {"type": "integer", "minimum": 1},
                "round_cap": {"type": "integer", "minimum": 1},
                "exact": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "object", "additionalProperties": False,
                   "properties": {"dir": {"type": "string"}}},
    },
}

RUN_DEFAULTS = {
    "n": 1000,
    "n_grid": [20, 40, 80, 160],
    "trials": 100,
    "ld_trials": 10_000,
    "epsilon": 0.25,
    "tolerance": 0.05,
    "grid_n": 64,
    "atom_cap": 1_000_000,
    "m_cap": 64,
    "round_cap": 100_000,
    "exact": False,
}


def _lazy(group: dict, run: dict | None = None, **extra) -> dict:
    cfg = {
        "group": group,
        "family": [{"preset": "lazy-step"}],
        "schedule": {"rule": CYCLIC, "indices": [0]},
        "observable": {"character": [1] * _width(group)},
        "start": [0] * _width(group),
        "run": {"n": 100_000, "trials": 100, "ld_trials": 100_000, "epsilon": 0.2,
                "n_grid": [20, 40, 80, 160], "tolerance": 0.05},
        "seed": 1,
    }
    cfg["run"].update(run or {})
    cfg.update(extra)
    return cfg


def _width(group: dict) -> int:
    if "finite" in group:
        return len(group["finite"])
    if "torus" in group:
        return group["torus"]
    if "cantor" in group:
        return group["cantor"]
    return 1


PRESETS: dict[str, dict] = {
    "z2-lazy": _lazy({"finite": [2]}, description="lazy walk on Z/2, (delta_0 + delta_1)/2"),
    "z4-lazy": _lazy({"finite": [4]}, {"n": 1000}, description="lazy walk on Z/4"),
    "z8-lazy": _lazy({"finite": [8]}, description="lazy walk on Z/8"),
    "z2-delta1": {
        "description": "delta_1 on Z/2: support in a coset of the trivial subgroup",
        "group": {"finite": [2]},
        "family": [{"atoms": [[[1], 1.0]]}],
        "schedule": {"rule": CYCLIC, "indices": [0]},
        "start": [0],
        "run": {"n": 20},
    },
    "z6-coset": {
        "description": "(delta_1 + delta_3)/2 on Z/6: support in the coset 1 + {0, 2, 4}",
        "group": {"finite": [6]},
        "family": [{"atoms": [[[1], 0.5], [[3], 0.5]]}],
        "schedule": {"rule": CYCLIC, "indices": [0]},
        "observable": {"character": [1]},
        "start": [0],
        "run": {"n": 50},
    },
    "z4-uniform": {
        "description": "uniform steps on Z/4: the walk is at Haar measure after one step",
        "group": {"finite": [4]},
        "family": [{"preset": "uniform"}],
        "schedule": {"rule": CYCLIC, "indices": [0]},
        "observable": {"table": [1, 2, 3, 4]},
        "start": [0],
        "run": {"n": 200, "ld_trials": 1000, "epsilon": 1.6, "n_grid": [10, 20, 40]},
        "seed": 1,
    },
    "z12-mixed": {
        "description": "seeded choice between two walks on Z/12 that are each aperiodic",
        "group": {"finite": [12]},
        "family": [{"atoms": [[[0], 0.5], [[1], 0.5]]},
                   {"atoms": [[[0], 0.25], [[5], 0.5], [[7], 0.25]]}],
        "schedule": {"rule": SEEDED_CHOICE, "seed": 3},
        "observable": {"character": [1]},
        "start": [0],
        "initial": {"preset": "dirac", "at": [0]},
        "run": {"n": 400, "epsilon": 0.25, "trials": 100, "tolerance": 0.05},
        "seed": 1,
    },
    "cantor-lazy": _lazy({"cantor": 4}, {"n": 2000}, family=[
        {"atoms": [[[0, 0, 0, 0], 0.2], [[1, 0, 0, 0], 0.2], [[0, 1, 0, 0], 0.2],
                   [[0, 0, 1, 0], 0.2], [[0, 0, 0, 1], 0.2]]}],
        description="a walk on the dyadic Cantor group truncated at depth 4"),
    "padic-lazy": _lazy({"padic": {"p": 3, "depth": 3}}, {"n": 2000},
                        description="lazy walk on the 3-adic integers truncated at depth 3"),
    "torus-golden": {
        "description": "(delta_0 + delta_g)/2 on the circle, g the golden mean",
        "group": {"torus": 1},
        "family": [{"atoms": [[[0.0], 0.5], [[GOLDEN], 0.5]]}],
        "irrational": [True],
        "schedule": {"rule": CYCLIC, "indices": [0]},
        "observable": {"character": [1]},
        "start": [0.0],
        "run": {"n": 100_000, "trials": 100, "ld_trials": 10_000, "epsilon": 0.2,
                "n_grid": [20, 40, 80, 160], "tolerance": 0.05, "grid_n": 64},
        "seed": 1,
    },
    "dirac-rotation": {
        "description": "mu = delta_alpha, alpha the golden mean: mu^n never converges",
        "group": {"torus": 1},
        "family": [{"atoms": [[[GOLDEN], 1.0]]}],
        "irrational": [True],
        "schedule": {"rule": CYCLIC, "indices": [0]},
        "start": [0.0],
        "scenario": "dirac-rotation",
        "alpha": GOLDEN,
        "run": {"n": 100},
    },
    "shrinking-support": {
        "description": "mu_n = (delta_0 + delta_{alpha/2^n})/2: supports stay inside [0, alpha]",
        "group": {"torus": 1},
        "irrational": [True],
        "start": [0.0],
        "scenario": "shrinking-support",
        "alpha": GOLDEN,
        "run": {"n": 30, "epsilon": 0.15},
    },
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None = None, preset: str | None = None) -> dict:
    """Read, merge and schema-check a config; raises ConfigError."""
    cfg: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}")
        cfg = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a mapping")
        cfg = deep_merge(cfg, user)
    if not cfg:
        raise ConfigError("give --config or --preset")
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from exc


def resolved_run(cfg: dict) -> dict:
    return {**RUN_DEFAULTS, **cfg.get("run", {})}


def build_group(cfg: dict) -> Group:
    try:
        return group_from_config(cfg["group"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_weight(w):
    return Fraction(w.replace(" ", "")) if isinstance(w, str) else w


def _point(g: Group, coords):
    """Config coordinates to an element; p-adic points may be given as [value]."""
    if isinstance(g, Torus):
        return g.element(tuple(float(c) for c in coords))
    if isinstance(g, PAdicInt) and len(coords) == 1 and g.depth > 1:
        if int(coords[0]) != coords[0]:
            raise ConfigError(f"p-adic value must be an integer, got {coords[0]}")
        return g.from_value(int(coords[0]))
    try:
        x = tuple(int(c) for c in coords)
        if any(int(c) != c for c in coords):
            raise ValueError
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{g} coordinates must be integers, got {coords}") from exc
    g.check(x)
    return x


def build_measure(g: Group, spec: dict, exact: bool = False) -> AtomicMeasure:
    try:
        if "atoms" in spec:
            pairs = [(_point(g, c), _parse_weight(w)) for c, w in spec["atoms"]]
            mu = from_pairs(g, pairs)
            if exact and not mu.exact:
                mu = from_pairs(g, [(x, Fraction(w)) for x, w in mu])
            if not mu.is_probability():
                raise ConfigError(f"measure weights sum to {float(mu.total_mass)}, expected 1")
            return mu
        name = spec["preset"]
        one = Fraction(1) if exact else 1.0
        if name == "uniform":
            if not g.finite:
                raise ConfigError("the uniform preset needs a finite group")
            return uniform(g, exact=exact)
        if name == "dirac":
            at = _point(g, spec["at"]) if "at" in spec else g.zero()
            return dirac(g, at, one)
        # lazy step: (delta_0 + delta_e)/2 with e the first generator
        half = one / 2
        e = _point(g, spec.get("at", _unit(g)))
        return from_pairs(g, [(g.zero(), half), (e, half)])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad measure {spec}: {exc}") from exc


def _unit(g: Group) -> list:
    width = len(g.array_moduli)
    if isinstance(g, Torus):
        raise ConfigError("lazy-step needs an explicit 'at' point on a torus")
    return [1] + [0] * (width - 1)


def build_family(cfg: dict, g: Group, exact: bool = False) -> list[AtomicMeasure]:
    if "family" not in cfg:
        raise ConfigError("config has no 'family'")
    return [build_measure(g, m, exact) for m in cfg["family"]]


def build_schedule(cfg: dict, family: list, seed: int | None) -> WalkSchedule:
    sched = cfg.get("schedule", {"rule": CYCLIC, "indices": [0]})
    rule = sched["rule"]
    if rule == SEEDED_CHOICE:
        s = sched.get("seed", seed)
        if s is None:
            raise ConfigError("seeded_choice schedule needs schedule.seed or a root seed")
        return WalkSchedule(tuple(family), SEEDED_CHOICE, (), int(s))
    indices = sched.get("indices", list(range(len(family))) if rule == CYCLIC else [0])
    try:
        return WalkSchedule(tuple(family), rule, tuple(indices))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_observable(cfg: dict, g: Group) -> Observable:
    spec = cfg.get("observable")
    if spec is None:
        raise ConfigError("config has no 'observable'")
    try:
        if "character" in spec:
            return Observable("character", g, frequency=tuple(spec["character"]))
        if "table" in spec:
            return Observable("table", g, table=tuple(spec["table"]))
        box = spec["lipschitz_box"]
        return Observable("lipschitz_box", g, lo=tuple(box["lo"]), hi=tuple(box["hi"]),
                          lipschitz=float(box["lipschitz"]))
    except ValueError as exc:
        raise ConfigError(f"bad observable: {exc}") from exc


def build_start(cfg: dict, g: Group):
    if "start" not in cfg:
        return g.zero()
    return _point(g, cfg["start"])


def build_initial(cfg: dict, g: Group, exact: bool = False) -> AtomicMeasure:
    if "initial" in cfg:
        return build_measure(g, cfg["initial"], exact)
    return dirac(g, build_start(cfg, g), Fraction(1) if exact else 1.0)


def build_irrational(cfg: dict, g: Group):
    flags = cfg.get("irrational")
    if flags is None:
        return None
    if len(flags) != len(g.array_moduli):
        raise ConfigError(f"'irrational' needs {len(g.array_moduli)} flags")
    return tuple(flags)
