"""Experiment configuration: YAML in, validated ExperimentConfig out.

Every error carries the dotted field path and, when the value came from a
file, its line number.  Numbers may be written as multiples of pi
("10pi", "8*pi", "pi").
"""
from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, InvalidMeasureError
from .geometry import KINDS
from .measure import parse_measure_spec
from .solvers import SolveConfig

SCENARIOS = ("minimize", "continuation", "mountain_pass", "mt_probe", "improved_mt_probe",
             "bm_probe", "quantization_suite")
DIRICHLET_ONLY = ("continuation", "improved_mt_probe", "bm_probe", "quantization_suite")
_PI = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*pi\s*$")


# YAML with line numbers -------------------------------------------------------------

def _construct(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else str(key)
            out[key] = _construct(v, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def load_yaml(text):
    """Returns (data, {dotted path: line})."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from exc
    if node is None:
        raise ConfigError("empty config")
    lines = {}
    data = _construct(node, "", lines)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    return data, lines


# typed accessors ---------------------------------------------------------------------

class _Reader:
    def __init__(self, lines):
        self.lines = lines

    def err(self, msg, path):
        line = self.lines.get(path)
        while line is None and "." in path:
            path = path.rsplit(".", 1)[0]
            line = self.lines.get(path)
        return ConfigError(msg, field=path, line=line)

    def number(self, value, path, positive=False, integer=False):
        if isinstance(value, bool):
            raise self.err(f"expected a number, got {value!r}", path)
        if isinstance(value, str):
            m = _PI.match(value)
            if not m:
                raise self.err(f"expected a number or a multiple of pi, got {value!r}", path)
            value = float(m.group(1) or 1.0) * math.pi
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise self.err(f"expected a finite number, got {value!r}", path)
        if integer:
            if int(value) != value:
                raise self.err(f"expected an integer, got {value!r}", path)
            value = int(value)
        if positive and value <= 0:
            raise self.err(f"must be positive, got {value}", path)
        return value

    def numbers(self, value, path, positive=False):
        """A list, or {from, to, num, spacing: geom|linear}."""
        if isinstance(value, dict):
            a = self.number(value.get("from"), f"{path}.from", positive)
            b = self.number(value.get("to"), f"{path}.to", positive)
            n = self.number(value.get("num", 10), f"{path}.num", True, True)
            spacing = value.get("spacing", "geom")
            if spacing not in ("geom", "linear"):
                raise self.err("spacing must be 'geom' or 'linear'", f"{path}.spacing")
            return (np.geomspace(a, b, n) if spacing == "geom" else np.linspace(a, b, n)).tolist()
        if not isinstance(value, list):
            value = [value]
        if not value:
            raise self.err("must not be empty", path)
        return [self.number(v, f"{path}[{i}]", positive) for i, v in enumerate(value)]

    def point(self, value, path):
        if not isinstance(value, list) or len(value) != 2:
            raise self.err(f"expected a point [x, y], got {value!r}", path)
        return [self.number(v, f"{path}[{i}]") for i, v in enumerate(value)]


# scenario parameter schemas: key -> (kind, default); _REQ marks required keys ------------

_REQ = object()
SCHEMAS = {
    "minimize": {"lambda": ("number", _REQ)},
    "continuation": {"thresholds": ("dict", {})},
    "quantization_suite": {"thresholds": ("dict", {}), "max_u_target": ("number", 12.0)},
    "mountain_pass": {"lambdas": ("numbers", _REQ), "endpoint_lambda": ("number", None),
                      "center": ("point", None), "small_ball_rho": ("number", 0.05),
                      "residual_tol": ("number", 1e-6)},
    "mt_probe": {"lambdas": ("numbers", _REQ), "eps": ("numbers", _REQ), "r0": ("number", 0.5),
                 "center": ("point", [0.0, 0.0]), "delta": ("number", 0.05), "slope_tol": ("number", 0.5),
                 "rate_tol": ("number", 0.15), "expect": ("dict", {})},
    "improved_mt_probe": {"centers": ("points", _REQ), "r0": ("number", 0.3), "eps_train": ("numbers", _REQ),
                          "eps_test": ("numbers", _REQ), "regions": ("list", _REQ), "a0": ("number", 0.25),
                          "d0": ("number", None), "eps": ("number", 0.01)},
    "bm_probe": {"trials": ("int", 100), "eta": ("number", 0.5)},
}


_NONNEG = ("lambda", "lambdas", "endpoint_lambda")
_POSITIVE = ("eps", "r0", "small_ball_rho", "residual_tol", "eta", "delta", "eps_train", "eps_test",
             "max_u_target", "rate_tol")


def _check_signs(rd, out):
    for key, v in out.items():
        vals = v if isinstance(v, list) else [v]
        if key in _NONNEG and any(x is not None and x < 0 for x in vals):
            raise rd.err(f"must be non-negative, got {v}", f"params.{key}")
        if key in _POSITIVE and any(x is not None and x <= 0 for x in vals):
            raise rd.err(f"must be positive, got {v}", f"params.{key}")


def _scenario_params(rd, scenario, raw):
    schema = SCHEMAS[scenario]
    raw = raw or {}
    if not isinstance(raw, dict):
        raise rd.err("params must be a mapping", "params")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise rd.err(f"unknown parameter(s) {unknown} for scenario {scenario!r}; allowed: {sorted(schema)}",
                     f"params.{unknown[0]}")
    out = {}
    for key, (kind, default) in schema.items():
        path = f"params.{key}"
        if key not in raw or raw[key] is None:
            if default is _REQ:
                raise rd.err(f"scenario {scenario!r} requires '{key}'", path)
            out[key] = copy.deepcopy(default)
            continue
        v = raw[key]
        if kind == "number":
            out[key] = rd.number(v, path)
        elif kind == "int":
            out[key] = rd.number(v, path, positive=True, integer=True)
        elif kind == "numbers":
            out[key] = rd.numbers(v, path)
        elif kind == "point":
            out[key] = rd.point(v, path)
        elif kind == "points":
            if not isinstance(v, list) or not v:
                raise rd.err("expected a list of points", path)
            out[key] = [rd.point(p, f"{path}[{i}]") for i, p in enumerate(v)]
        elif kind == "dict":
            if not isinstance(v, dict):
                raise rd.err("expected a mapping", path)
            out[key] = v
        elif kind == "list":
            if not isinstance(v, list):
                raise rd.err("expected a list", path)
            out[key] = v
    _check_signs(rd, out)
    if scenario == "improved_mt_probe":
        if len(out["regions"]) != 2:
            raise rd.err("exactly two regions are needed", "params.regions")
        for i, r in enumerate(out["regions"]):
            _check_region(rd, r, f"params.regions[{i}]")
    if scenario == "mt_probe":
        expect = {}
        for k, v in out["expect"].items():
            if v not in ("bounded", "unbounded"):
                raise rd.err(f"expectation must be 'bounded' or 'unbounded', got {v!r}", f"params.expect.{k}")
            expect[rd.number(k, f"params.expect.{k}")] = v
        out["expect"] = expect
    return out


def _check_region(rd, r, path):
    if not isinstance(r, dict):
        raise rd.err("region must be a mapping", path)
    keys = set(r)
    if keys == {"center", "radius"}:
        rd.point(r["center"], f"{path}.center")
        rd.number(r["radius"], f"{path}.radius", positive=True)
    elif len(keys) == 1 and keys <= {"x_below", "x_above", "y_below", "y_above"}:
        k = next(iter(keys))
        rd.number(r[k], f"{path}.{k}")
    else:
        raise rd.err("region is {center, radius} or one of x_below/x_above/y_below/y_above", path)


@dataclass
class ExperimentConfig:
    geometry: dict
    measure: dict
    scenario: str
    params: dict
    solver: dict = field(default_factory=dict)
    seed: int = 0
    output: str | None = None
    jobs: int = 1
    source: str | None = None

    def measure_object(self):
        return parse_measure_spec(self.measure)

    def solve_config(self):
        return SolveConfig(**copy.deepcopy(self.solver))

    def echo(self):
        return {"geometry": self.geometry, "measure": self.measure, "scenario": self.scenario,
                "params": self.params, "solver": self.solver, "seed": self.seed, "output": self.output,
                "jobs": self.jobs}


def parse_config(data, lines=None, source=None) -> ExperimentConfig:
    rd = _Reader(lines or {})
    allowed = {"geometry", "measure", "scenario", "params", "solver", "seed", "output", "jobs"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise rd.err(f"unknown top-level key(s) {unknown}; allowed: {sorted(allowed)}", unknown[0])
    for key in ("geometry", "measure", "scenario"):
        if key not in data:
            raise rd.err(f"missing required section '{key}'", key)

    g = data["geometry"]
    if not isinstance(g, dict):
        raise rd.err("geometry must be a mapping", "geometry")
    if g.get("kind") not in KINDS:
        raise rd.err(f"kind must be one of {list(KINDS)}, got {g.get('kind')!r}", "geometry.kind")
    geometry = {"kind": g["kind"],
                "resolution": rd.number(g.get("resolution", 64), "geometry.resolution", True, True),
                "params": dict(g.get("params") or {}),
                "solver": g.get("solver", "direct")}
    if geometry["resolution"] < 8:
        raise rd.err("resolution must be at least 8", "geometry.resolution")
    for k, v in geometry["params"].items():
        if k == "periods":
            geometry["params"][k] = [rd.number(x, f"geometry.params.periods[{i}]", True) for i, x in enumerate(v)]
        else:
            geometry["params"][k] = rd.number(v, f"geometry.params.{k}", True)
    if geometry["solver"] not in ("direct", "cg"):
        raise rd.err("solver must be 'direct' or 'cg'", "geometry.solver")

    m = data["measure"]
    if not isinstance(m, dict):
        raise rd.err("measure must be a mapping", "measure")
    try:
        parse_measure_spec(m)
    except InvalidMeasureError as exc:
        raise rd.err(str(exc), "measure") from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise rd.err(f"invalid measure: {exc}", "measure") from exc

    scenario = data["scenario"]
    if scenario not in SCENARIOS:
        raise rd.err(f"scenario must be one of {list(SCENARIOS)}, got {scenario!r}", "scenario")
    is_torus = geometry["kind"] == "flat_torus"
    if scenario == "mountain_pass" and not is_torus:
        raise rd.err("mountain_pass runs on the flat torus", "geometry.kind")
    if scenario in DIRICHLET_ONLY and is_torus:
        raise rd.err(f"scenario {scenario!r} needs a Dirichlet geometry", "geometry.kind")
    params = _scenario_params(rd, scenario, data.get("params"))

    solver = data.get("solver") or {}
    if not isinstance(solver, dict):
        raise rd.err("solver must be a mapping", "solver")
    solver = copy.deepcopy(solver)
    cont = solver.get("continuation")
    if isinstance(cont, dict):
        for k, v in cont.items():
            cont[k] = rd.number(v, f"solver.continuation.{k}")
    try:
        SolveConfig(**copy.deepcopy(solver))
    except TypeError as exc:
        raise rd.err(f"unknown solver option: {exc}", "solver") from exc
    except ValueError as exc:
        raise rd.err(str(exc), "solver") from exc

    seed = rd.number(data.get("seed", 0), "seed", integer=True)
    jobs = rd.number(data.get("jobs", 1), "jobs", positive=True, integer=True)
    out = data.get("output")
    return ExperimentConfig(geometry, m, scenario, params, solver, seed, out, jobs, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    data, lines = load_yaml(text)
    return parse_config(data, lines, str(path))
