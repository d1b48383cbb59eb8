"""Experiment configuration: JSON schema, semantic checks and the resolved dataclass."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from dataclasses import field as dc_field

import jsonschema

EXPERIMENTS = ("operators", "forms", "mosco", "simulate", "crossings", "rcm")

_pos = {"type": "number", "exclusiveMinimum": 0}
_interval = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "d", "window", "k_list"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "d": {"type": "integer", "minimum": 1, "maximum": 3},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
        "amp": _pos,
        "kernel": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {"kind": {"enum": ["stable", "phi"]},
                           "phi_power": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2}},
        },
        "window": {
            "type": "object", "additionalProperties": False, "required": ["L"],
            "properties": {"L": _pos, "topology": {"enum": ["periodic", "absorbing"]},
                           "anchor": {"enum": ["centered", "dyadic"]}},
        },
        "k_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "lambda_list": {"type": "array", "items": _pos},
        "t_list": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "truncation_radius": _pos,
        "quad_order": {"type": "integer", "minimum": 1, "maximum": 32},
        "construction": {"enum": ["cell_averaged", "pointwise"]},
        "tail_compensation": {"type": "boolean"},
        "tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-2},
        "trunc": {
            "type": "object", "additionalProperties": False, "required": ["j", "delta"],
            "properties": {"j": _pos, "delta": _pos},
        },
        "field": {
            "type": "object", "additionalProperties": False, "required": ["dist"],
            "properties": {"dist": {"enum": ["uniform02", "bounded", "bernoulli_mix"]},
                           "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
                           "seeds": {"type": "array", "minItems": 1,
                                     "items": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1}},
                           "param": _pos},
        },
        "paths": {
            "type": "object", "additionalProperties": False, "required": ["n", "T"],
            "properties": {"n": {"type": "integer", "minimum": 1}, "T": _pos,
                           "x0": {"type": "array", "items": {"type": "number"}},
                           "export": {"type": "boolean"}},
        },
        "test_function": {
            "type": "object", "additionalProperties": False, "required": ["kind"],
            "properties": {"kind": {"enum": ["hat", "gaussian", "constant"]},
                           "width": _pos, "sigma": _pos, "value": {"type": "number"}},
        },
        "crossings": {
            "type": "object", "additionalProperties": False, "required": ["D1", "D2"],
            "properties": {"D1": _interval, "D2": _interval, "initial_width": _pos},
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "output_dir": {"type": "string"},
    },
}


class ConfigError(ValueError):
    """Schema or range violation; ``field`` is the dotted path of the offending entry."""

    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


@dataclass
class ExperimentConfig:
    experiment: str
    d: int
    window: dict
    k_list: list
    alpha: float = 1.0
    amp: float = 1.0
    kernel: dict | None = None
    lambda_list: list = dc_field(default_factory=lambda: [1.0])
    t_list: list = dc_field(default_factory=lambda: [1.0])
    truncation_radius: float = 200.0
    quad_order: int = 8
    construction: str = "cell_averaged"
    tail_compensation: bool = False
    tol: float = 1e-9
    trunc: dict | None = None
    field: dict | None = None
    paths: dict | None = None
    test_function: dict = dc_field(default_factory=lambda: {"kind": "hat", "width": 1.0})
    crossings: dict | None = None
    seed: int = 0
    output_dir: str = "out"

    @property
    def L(self) -> float:
        return float(self.window["L"])

    @property
    def topology(self) -> str:
        return self.window.get("topology", "periodic")

    @property
    def anchor(self) -> str:
        return self.window.get("anchor", "centered")

    def kernel_spec(self) -> dict:
        if self.kernel and self.kernel.get("kind") == "phi":
            return dict(self.kernel)
        return {"kind": "stable", "alpha": self.alpha, "amp": self.amp}

    def to_dict(self) -> dict:
        return asdict(self)


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1]
        parts.append(missing)
    elif err.validator == "additionalProperties":
        extra = err.message.split("'")[1]
        parts.append(extra)
    return ".".join(parts) or "<root>"


def schema_errors(raw) -> list[tuple[str, str]]:
    v = jsonschema.Draft202012Validator(SCHEMA)
    return [(_path(e), e.message) for e in sorted(v.iter_errors(raw), key=lambda e: list(e.absolute_path))]


def semantic_errors(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    errs = []
    for k in cfg.k_list:
        n = cfg.L * k
        if abs(n - round(n)) > 1e-9:
            errs.append(("window.L", f"L={cfg.L} is not a multiple of 1/k for k={k}"))
    if cfg.experiment in ("forms", "mosco", "rcm") and any(b <= a for a, b in zip(cfg.k_list, cfg.k_list[1:])):
        errs.append(("k_list", "k_list must be strictly increasing"))
    if cfg.trunc is not None:
        j, de = cfg.trunc["j"], cfg.trunc["delta"]
        if not de < j:
            errs.append(("trunc.delta", f"delta={de} must be smaller than j={j}"))
        if j + 2 > cfg.L / 2:
            errs.append(("trunc.j", f"ball B_(j+2) with j={j} overflows half the window side {cfg.L / 2}"))
    if cfg.experiment in ("mosco", "rcm") and cfg.topology != "periodic":
        errs.append(("window.topology", "spectral comparisons need a periodic window"))
    if cfg.experiment == "mosco" and not cfg.lambda_list:
        errs.append(("lambda_list", "mosco needs at least one lambda"))
    if cfg.experiment == "rcm" and cfg.field is None:
        errs.append(("field", "rcm needs a field specification"))
    if cfg.experiment in ("simulate", "crossings") and cfg.paths is None:
        errs.append(("paths", f"{cfg.experiment} needs a paths block"))
    if cfg.experiment == "crossings":
        if cfg.crossings is None:
            errs.append(("crossings", "crossings needs D1 and D2"))
        elif cfg.d != 1:
            errs.append(("d", "crossing experiments are one-dimensional"))
    if cfg.experiment == "forms" and cfg.d != 1:
        errs.append(("d", "continuum form targets are one-dimensional"))
    if cfg.paths and cfg.paths.get("x0") is not None and len(cfg.paths["x0"]) != cfg.d:
        errs.append(("paths.x0", f"x0 needs {cfg.d} coordinates"))
    fd = cfg.field or {}
    if fd.get("dist") == "bounded" and not (1.0 <= fd.get("param", 0) <= 2.0):
        errs.append(("field.param", "bounded(c) needs 1 <= c <= 2"))
    if fd.get("dist") == "bernoulli_mix" and not (0 < fd.get("param", 0) <= 1.0):
        errs.append(("field.param", "bernoulli_mix(p) needs 0 < p <= 1"))
    tf = cfg.test_function
    if tf["kind"] == "hat" and tf.get("width", 1.0) >= cfg.L / 2:
        errs.append(("test_function.width", "hat support must fit inside the window"))
    return errs


def load_config(path, env=None) -> ExperimentConfig:
    """Read, schema-check and resolve a config; raises ConfigError on the first problem."""
    env = os.environ if env is None else env
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "<root>") from exc
    return resolve(raw, env)


def resolve(raw, env=None) -> ExperimentConfig:
    env = {} if env is None else env
    errs = schema_errors(raw)
    if errs:
        raise ConfigError(errs[0][1], errs[0][0])
    cfg = ExperimentConfig(**raw)
    override = env.get("JUMPGRID_SEED")
    if override is not None:
        try:
            s = int(override)
        except ValueError as exc:
            raise ConfigError("JUMPGRID_SEED must be an integer", "seed") from exc
        if not 0 <= s < 2 ** 64:
            raise ConfigError("JUMPGRID_SEED must fit in 64 bits", "seed")
        cfg.seed = s
        if cfg.field is not None:
            cfg.field = dict(cfg.field, seed=s)
            cfg.field.pop("seeds", None)
    errs = semantic_errors(cfg)
    if errs:
        raise ConfigError(errs[0][1], errs[0][0])
    return cfg
