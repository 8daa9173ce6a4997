"""Scenario configuration: schema, defaults and model construction.

A configuration is a YAML mapping.  Each scenario supplies defaults; the
user file is merged over them and every key is checked against the schema
before anything is computed.  See ``examples/configs`` in the repository
for an annotated file per scenario.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import geometry as geo
from . import material as mat
from .errors import ConfigError
from .fields import SpaceTimeGrid, torus_lift
from .integrator import DiscreteLagrangianConfig, SolverSettings

__all__ = ["SCENARIOS", "ScenarioConfig", "load_config", "parse_config", "default_config"]

SCENARIOS = ("elastic_bar_1d", "barotropic_gas_2d", "incompressible_2d", "metric_check_polar", "custom")

# allowed keys per section; None marks a free-form leaf
SCHEMA = {
    "scenario": None,
    "output_dir": None,
    "material": {"rho": None, "energy": None, "incompressible": None},
    "metric": {"base": None, "fiber": None},
    "grid": {"extents": None, "nodes": None, "dt": None, "boundary": None},
    "initial": {"kind": None, "amplitude": None, "mode": None, "velocity": None},
    "solver": {"newton_tol": None, "max_iter": None, "linear_solver": None, "cg_tol": None,
               "quadrature": None, "seed_order": None},
    "run": {"n_steps": None, "snapshot_cadence": None},
    "diagnostics": {"cadence": None},
    "verify": {"samples": None, "refinements": None},
}

ENERGY_KEYS = {
    "constant": {"kind", "c"},
    "quadratic": {"kind", "stiffness"},
    "log": {"kind"},
    "polytropic": {"kind", "kappa", "gamma"},
    "stvenant": {"kind", "lame_lambda", "lame_mu"},
    "neohookean": {"kind", "lame_lambda", "lame_mu"},
}

INITIAL_KINDS = ("rest", "standing_wave", "taylor_green", "gas_wave", "uniform_flow")

_COMMON = {
    "output_dir": "output",
    "solver": {"newton_tol": 1e-10, "max_iter": 50, "linear_solver": "sparse_lu", "cg_tol": 1e-13,
               "quadrature": "trapezoid", "seed_order": 2},
    "run": {"n_steps": 100, "snapshot_cadence": 10},
    "diagnostics": {"cadence": 10},
    "verify": {"samples": 20, "refinements": 3},
    "metric": {"base": "euclidean", "fiber": "euclidean"},
}

DEFAULTS = {
    "elastic_bar_1d": {
        "material": {"rho": 1.0, "energy": {"kind": "stvenant", "lame_lambda": 0.5, "lame_mu": 0.25},
                     "incompressible": False},
        "grid": {"extents": [[0.0, 1.0]], "nodes": [33], "dt": 0.0078125, "boundary": ["fixed"]},
        "initial": {"kind": "standing_wave", "amplitude": 1e-3, "mode": 4},
    },
    "barotropic_gas_2d": {
        "material": {"rho": 1.0, "energy": {"kind": "quadratic", "stiffness": 1.0}, "incompressible": False},
        "grid": {"extents": [[0.0, 2 * np.pi], [0.0, 2 * np.pi]], "nodes": [32, 32], "dt": 0.02,
                 "boundary": ["periodic", "periodic"]},
        "initial": {"kind": "gas_wave", "amplitude": 0.2},
        "run": {"n_steps": 200, "snapshot_cadence": 50},
    },
    "incompressible_2d": {
        "material": {"rho": 1.0, "energy": {"kind": "constant", "c": 0.0}, "incompressible": True},
        "grid": {"extents": [[0.0, 2 * np.pi], [0.0, 2 * np.pi]], "nodes": [32, 32], "dt": 0.004,
                 "boundary": ["periodic", "periodic"]},
        "initial": {"kind": "taylor_green", "amplitude": 1.0},
        "run": {"n_steps": 500, "snapshot_cadence": 100},
        "diagnostics": {"cadence": 1},
    },
    "metric_check_polar": {
        "material": {"rho": 1.0, "energy": {"kind": "neohookean", "lame_lambda": 2.0, "lame_mu": 1.0},
                     "incompressible": False},
        "metric": {"base": "polar", "fiber": "polar"},
        "grid": {"extents": [[1.0, 2.0], [0.0, 1.0]], "nodes": [17, 17], "dt": 0.01,
                 "boundary": ["fixed", "fixed"]},
        "initial": {"kind": "rest"},
        "run": {"n_steps": 0, "snapshot_cadence": 1},
    },
    "custom": {
        "material": {"rho": 1.0, "energy": {"kind": "constant", "c": 0.0}, "incompressible": False},
        "grid": {"extents": [[0.0, 1.0]], "nodes": [17], "dt": 0.01, "boundary": ["fixed"]},
        "initial": {"kind": "rest"},
    },
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "energy":
            out[k] = _merge(out[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(data, schema, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{path.rstrip('.') or 'root'}' must be a mapping")
    for k, v in data.items():
        if k not in schema:
            raise ConfigError(f"unknown configuration key '{path}{k}'")
        if schema[k] is not None:
            _check_keys(v, schema[k], f"{path}{k}.")


def default_config(scenario: str) -> dict:
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}")
    return _merge(_merge(_COMMON, DEFAULTS[scenario]), {"scenario": scenario})


@dataclass
class ScenarioConfig:
    """Validated configuration with the objects it describes."""

    raw: dict
    scenario: str
    model: mat.MaterialModel
    grid: SpaceTimeGrid
    settings: SolverSettings
    quadrature: DiscreteLagrangianConfig
    seed_order: int
    n_steps: int
    snapshot_cadence: int
    cadence: int
    samples: int
    refinements: int
    output_dir: Path

    @property
    def constrained(self) -> bool:
        return self.model.incompressible

    def lift(self) -> np.ndarray:
        return torus_lift(self.grid)

    def initial_state(self):
        """Positions and velocities at ``t = 0``."""
        return initial_state(self.raw["initial"], self.grid)


def _num(value, name, kind=float, positive=False, minimum=None):
    try:
        v = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must be a number") from None
    if isinstance(value, bool):
        raise ConfigError(f"'{name}' must be a number")
    if positive and not v > 0:
        raise ConfigError(f"'{name}' must be positive")
    if minimum is not None and v < minimum:
        raise ConfigError(f"'{name}' must be at least {minimum}")
    return v


def build_energy(spec) -> mat.StoredEnergy:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("material.energy needs a 'kind'")
    kind = spec["kind"]
    if kind not in ENERGY_KEYS:
        raise ConfigError(f"energy kind must be one of {sorted(ENERGY_KEYS)}")
    extra = set(spec) - ENERGY_KEYS[kind]
    if extra:
        raise ConfigError(f"unknown keys for energy '{kind}': {sorted(extra)}")
    if kind == "constant":
        return mat.ConstantEnergy(_num(spec.get("c", 0.0), "energy.c"))
    if kind == "quadratic":
        return mat.quadratic_barotropic(_num(spec.get("stiffness", 1.0), "energy.stiffness", positive=True))
    if kind == "log":
        return mat.log_barotropic()
    if kind == "polytropic":
        return mat.polytropic(_num(spec.get("kappa", 1.0), "energy.kappa", positive=True),
                              _num(spec.get("gamma", 1.4), "energy.gamma", positive=True))
    lam = _num(spec.get("lame_lambda", 1.0), "energy.lame_lambda")
    mu = _num(spec.get("lame_mu", 1.0), "energy.lame_mu", positive=True)
    if kind == "stvenant":
        return mat.StVenantKirchhoff(lam, mu)
    return mat.NeoHookean(mu, lam)


def build_metric(spec, dim: int, base_dir: Path | None = None) -> geo.MetricField:
    if isinstance(spec, str):
        spec = {"kind": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("metric entries are a name or a mapping with 'kind'")
    kind = spec["kind"]
    if kind == "euclidean":
        return geo.euclidean(dim)
    if kind == "conformal":
        return geo.conformal(dim, _num(spec.get("factor", 1.0), "metric.factor", positive=True))
    if kind == "polar":
        if dim != 2:
            raise ConfigError("the polar metric needs a 2D chart")
        return geo.polar(_num(spec.get("r_min", 1e-3), "metric.r_min", positive=True))
    if kind == "user_table":
        path = Path(spec.get("path", ""))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"metric table '{path}' not found")
        try:
            m = geo.load_metric_table(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if m.dim != dim:
            raise ConfigError("metric table dimension does not match the grid")
        return m
    raise ConfigError("metric kind must be euclidean, conformal, polar or user_table")


def build_grid(spec) -> SpaceTimeGrid:
    try:
        extents = tuple((float(a), float(b)) for a, b in spec["extents"])
        nodes = tuple(int(n) for n in spec["nodes"])
        boundary = tuple(str(b) for b in spec["boundary"])
        dt = _num(spec["dt"], "grid.dt", positive=True)
        return SpaceTimeGrid(extents, nodes, dt, boundary)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid grid section: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc


def initial_state(spec, grid: SpaceTimeGrid):
    kind = spec.get("kind", "rest")
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"initial.kind must be one of {INITIAL_KINDS}")
    X = grid.coords()
    n = grid.n_space
    amp = float(spec.get("amplitude", 0.0) or 0.0)
    phi = X.copy()
    V = np.zeros_like(X)
    if kind == "standing_wave":
        mode = int(spec.get("mode", 1))
        (a, b) = grid.extents[0]
        phi[..., 0] += amp * np.sin(mode * np.pi * (X[..., 0] - a) / (b - a))
    elif kind == "taylor_green":
        if n != 2:
            raise ConfigError("taylor_green needs a 2D grid")
        x, y = X[..., 0], X[..., 1]
        V = amp * np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], -1)
    elif kind == "gas_wave":
        if n != 2:
            raise ConfigError("gas_wave needs a 2D grid")
        x, y = X[..., 0], X[..., 1]
        V = amp * np.stack([np.sin(y) + 0.5 * np.sin(x), 0.5 * np.sin(x) + 0.3 * np.cos(y)], -1)
    elif kind == "uniform_flow":
        u = np.asarray(spec.get("velocity", [0.0] * n), dtype=float)
        if u.shape != (n,):
            raise ConfigError("initial.velocity needs one component per axis")
        V = np.broadcast_to(u, X.shape).copy()
    return phi, V


def parse_config(data: dict, base_dir: Path | None = None, refine: int = 1,
                 output_dir: str | None = None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    _check_keys(data, SCHEMA)
    scenario = data.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(f"'scenario' must be one of {SCENARIOS}")
    raw = _merge(default_config(scenario), data)
    _check_keys(raw, SCHEMA)
    if int(refine) < 1:
        raise ConfigError("--refine must be a positive integer")
    grid = build_grid(raw["grid"])
    if refine > 1:
        grid = grid.refined(int(refine))
    n = grid.n_space
    m = raw["material"]
    G = build_metric(raw["metric"]["base"], n, base_dir)
    g = build_metric(raw["metric"]["fiber"], n, base_dir)
    model = mat.MaterialModel(_num(m["rho"], "material.rho", positive=True), build_energy(m["energy"]),
                              G, g, incompressible=bool(m.get("incompressible", False)))
    s = raw["solver"]
    try:
        settings = SolverSettings(_num(s["newton_tol"], "solver.newton_tol", positive=True),
                                  _num(s["max_iter"], "solver.max_iter", int, minimum=1),
                                  str(s["linear_solver"]), _num(s["cg_tol"], "solver.cg_tol", positive=True))
        quad = DiscreteLagrangianConfig(str(s["quadrature"]))
    except ConfigError:
        raise
    seed_order = _num(s["seed_order"], "solver.seed_order", int)
    if seed_order not in (1, 2):
        raise ConfigError("solver.seed_order must be 1 or 2")
    initial_state(raw["initial"], grid)
    r = raw["run"]
    steps = _num(r["n_steps"], "run.n_steps", int, minimum=0) * int(refine)
    out = Path(output_dir) if output_dir is not None else Path(raw["output_dir"])
    if base_dir is not None and output_dir is None and not out.is_absolute():
        out = base_dir / out
    return ScenarioConfig(
        raw=raw, scenario=scenario, model=model, grid=grid, settings=settings, quadrature=quad,
        seed_order=seed_order, n_steps=steps,
        snapshot_cadence=_num(r["snapshot_cadence"], "run.snapshot_cadence", int, minimum=1),
        cadence=_num(raw["diagnostics"]["cadence"], "diagnostics.cadence", int, minimum=1),
        samples=_num(raw["verify"]["samples"], "verify.samples", int, minimum=1),
        refinements=_num(raw["verify"]["refinements"], "verify.refinements", int, minimum=2),
        output_dir=out,
    )


def load_config(path, refine: int = 1, output_dir: str | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return parse_config(data, path.parent, refine, output_dir)
