"""Strict JSON experiment configuration.

A config is one JSON object::

    {
      "problem": {"grid": {...}, "omega": {...}, "u0": {...}, "kernel": {...},
                  "potential": {...}, "mode": "minimize", "reach": 4.0},
      "solver": {...},
      "seed": 0,
      "audits": [{"type": "dg", ...}, ...]
    }

Unknown keys anywhere are rejected. ``null`` stands for an infinite radius
(``r0``, ``R0``) or for k0 = -inf.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .dg_verify import DGParams
from .errors import ConfigError
from .kernels import KernelSpec, angular_family, check_ellipticity, check_symmetry, convolution_family
from .lattice import Ball, Box, ExteriorExtension, Grid, GridFunction, Region
from .potentials import Growth, PotentialSpec
from .solve import ProblemSpec, SolverOptions

AUDIT_TYPES = ("dg", "sup_bound", "hoelder", "harnack", "weak_harnack", "growth", "tail", "iso_frac", "iso_w1p",
               "minimality")
RANDOMIZED_AUDITS = ("minimality",)


def _obj(d: Any, where: str, required: tuple[str, ...] = (), optional: tuple[str, ...] = ()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(d) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")
    return d


def _num(v: Any, where: str, allow_null: bool = False) -> float | None:
    if v is None and allow_null:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number")
    return float(v)


def _vec(v: Any, where: str, dim: int | None = None) -> tuple[float, ...]:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a list of numbers")
    out = tuple(_num(x, where) for x in v)
    if dim is not None and len(out) != dim:
        raise ConfigError(f"{where}: expected {dim} components")
    return out


# ---------------------------------------------------------------------------
# named profiles for u0 and audit inputs


def _first(x: np.ndarray) -> np.ndarray:
    return x[:, 0]


def _radius(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=1))


PROFILE_PARAMS: dict[str, tuple[str, ...]] = {
    "constant": ("c",),
    "sign": (),
    "tanh": ("width",),
    "linear": ("slope",),
    "sine": ("base", "amp", "freq"),
    "abs_power": ("alpha",),
    "bump": ("radius", "height"),
    "halfplane_indicator": ("offset",),
}


def profile_function(name: str, params: dict) -> tuple[Callable[[np.ndarray], np.ndarray], float]:
    """(vectorised fn on points (m, n), growth exponent) for a named profile.

    Profiles other than ``bump`` depend on the first coordinate only.
    """
    if name not in PROFILE_PARAMS:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILE_PARAMS)}")
    _obj(params, f"profile {name}", optional=PROFILE_PARAMS[name])
    get = lambda k, dflt: _num(params.get(k, dflt), f"profile {name}.{k}")  # noqa: E731
    if name == "constant":
        c = get("c", 0.0)
        return (lambda x: np.full(len(x), c)), 0.0
    if name == "sign":
        return (lambda x: np.sign(_first(x))), 0.0
    if name == "tanh":
        w = get("width", 1.0)
        if not w > 0:
            raise ConfigError("profile tanh: width must be positive")
        return (lambda x: np.tanh(_first(x) / w)), 0.0
    if name == "linear":
        a = get("slope", 1.0)
        return (lambda x: a * _first(x)), (1.0 if a != 0 else 0.0)
    if name == "sine":
        b, a, f = get("base", 1.0), get("amp", 0.5), get("freq", 3.0)
        return (lambda x: b + a * np.sin(f * _first(x))), 0.0
    if name == "abs_power":
        al = get("alpha", 0.5)
        if not al > 0:
            raise ConfigError("profile abs_power: alpha must be positive")
        return (lambda x: np.abs(_first(x)) ** al), al
    if name == "bump":
        rad, hgt = get("radius", 0.5), get("height", 1.0)
        if not rad > 0:
            raise ConfigError("profile bump: radius must be positive")

        def bump(x: np.ndarray) -> np.ndarray:
            t = np.clip(1.0 - (_radius(x) / rad) ** 2, 0.0, None)
            return hgt * t**2

        return bump, 0.0
    off = get("offset", 0.0)
    return (lambda x: (_first(x) > off).astype(float)), 0.0


def profile_grid_function(grid: Grid, spec: dict) -> GridFunction:
    """Sample a profile; ``extension`` selects the exterior rule (default: the profile itself)."""
    spec = _obj(spec, "profile", required=("profile",), optional=("params", "extension"))
    fn, beta = profile_function(spec["profile"], spec.get("params", {}))
    ext = spec.get("extension", "profile")
    if spec["profile"] == "halfplane_indicator":
        # cells on the interface carry the value 1/2
        off = float(spec.get("params", {}).get("offset", 0.0))
        xs = grid.axis_centers(0)
        xc = float(xs[np.argmin(np.abs(xs - off))])
        x1 = grid.centers[:, 0]
        vals = np.where(np.abs(x1 - xc) < 1e-9 * grid.h, 0.5, (x1 > xc).astype(float))
        fn_ext = lambda x: (_first(x) > xc).astype(float)  # noqa: E731
        return GridFunction(grid, vals, _extension(ext, fn_ext, beta, spec["profile"]))
    vals = np.asarray(fn(grid.centers), dtype=float)
    return GridFunction(grid, vals, _extension(ext, fn, beta, spec["profile"]))


def _extension(ext: Any, fn, beta: float, label: str) -> ExteriorExtension:
    if ext == "profile":
        return ExteriorExtension.custom(fn, beta=beta, label=label)
    if isinstance(ext, str):
        try:
            return ExteriorExtension.from_spec(ext)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError("extension must be 'profile' or an extension spec string")


# ---------------------------------------------------------------------------
# problem pieces


def parse_grid(d: Any) -> Grid:
    d = _obj(d, "grid", required=("lo", "hi", "h"))
    lo, hi = _vec(d["lo"], "grid.lo"), _vec(d["hi"], "grid.hi")
    try:
        return Grid(lo, hi, _num(d["h"], "grid.h"))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def parse_region(d: Any, dim: int, where: str = "omega") -> Region:
    if not isinstance(d, dict) or d.get("type") not in ("box", "ball"):
        raise ConfigError(f"{where}: expected an object with type 'box' or 'ball'")
    try:
        if d["type"] == "box":
            _obj(d, where, required=("type", "lo", "hi"))
            return Box(_vec(d["lo"], f"{where}.lo", dim), _vec(d["hi"], f"{where}.hi", dim))
        _obj(d, where, required=("type", "center", "radius"))
        return Ball(_vec(d["center"], f"{where}.center", dim), _num(d["radius"], f"{where}.radius"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def parse_kernel(d: Any, dim: int) -> KernelSpec:
    d = _obj(d, "kernel", required=("s", "p"),
             optional=("variant", "lambda", "r0", "r1", "family", "amp", "table", "default"))
    variant = d.get("variant", "standard")
    kw: dict = {"s": _num(d["s"], "kernel.s"), "p": _num(d["p"], "kernel.p"),
                "lam": _num(d.get("lambda", 1.0), "kernel.lambda"), "variant": variant}
    r0 = _num(d.get("r0"), "kernel.r0", allow_null=True)
    kw["r0"] = math.inf if r0 is None else r0
    if "r1" in d:
        kw["r1"] = _num(d["r1"], "kernel.r1")
    amp = _num(d.get("amp", 0.0), "kernel.amp")
    try:
        if variant == "angular":
            kw["a0"] = angular_family(d.get("family", "cos2"), amp)
        elif variant == "convolution":
            kw["a0"] = convolution_family(d.get("family", "gauss"), amp)
        elif variant == "custom":
            table = d.get("table", [])
            if not isinstance(table, list):
                raise ConfigError("kernel.table: expected a list of [offset, value] pairs")
            kw["table"] = tuple((_vec(z, "kernel.table offset", dim), _num(v, "kernel.table value"))
                                for z, v in table)
            kw["default"] = _num(d.get("default", 1.0), "kernel.default")
        k = KernelSpec(**kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"kernel: {exc}") from exc
    sym = check_symmetry(k, samples=200, seed=0, dim=dim)
    if not sym.passed:
        raise ConfigError(f"kernel is not symmetric (deviation {sym.worst_ratio:.3g})")
    ell = check_ellipticity(k, samples=200, seed=0, dim=dim)
    if not ell.passed:
        raise ConfigError(f"kernel amplitude violates the ellipticity bounds (worst ratio {ell.worst_ratio:.3g})")
    return k


def parse_potential(d: Any) -> PotentialSpec:
    d = _obj(d, "potential", required=("variant",),
             optional=("d", "lambda1", "lambda2", "table", "table_is_f", "growth"))
    kw: dict = {"variant": d["variant"]}
    for key in ("d", "lambda1", "lambda2"):
        if key in d:
            kw[key] = _num(d[key], f"potential.{key}")
    if "table" in d:
        kw["table"] = tuple(tuple(_vec(row, "potential.table row", 2)) for row in d["table"])
    if "table_is_f" in d:
        if not isinstance(d["table_is_f"], bool):
            raise ConfigError("potential.table_is_f: expected a boolean")
        kw["table_is_f"] = d["table_is_f"]
    try:
        if "growth" in d:
            gd = _obj(d["growth"], "potential.growth", optional=("d1", "d2", "q"))
            kw["growth"] = Growth(**{k: _num(v, f"potential.growth.{k}") for k, v in gd.items()})
        return PotentialSpec(**kw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"potential: {exc}") from exc


_SOLVER_KEYS = ("max_sweeps", "tol_u", "tol_E", "line_search_points", "line_search_tol", "bracket_width", "init",
                "relaxation")


def parse_solver(d: Any, seed: int | None) -> SolverOptions:
    d = _obj(d, "solver", optional=_SOLVER_KEYS)
    kw: dict = {}
    for key, v in d.items():
        if key == "init":
            kw[key] = v
        elif key in ("max_sweeps", "line_search_points"):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"solver.{key}: expected an integer")
            kw[key] = v
        else:
            kw[key] = _num(v, f"solver.{key}")
    if kw.get("init") == "random":
        if seed is None:
            raise ConfigError("solver.init = 'random' needs a seed")
        kw["seed"] = seed
    try:
        return SolverOptions(**kw)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc


def parse_dg_params(d: Any, s: float, p: float, n: int) -> DGParams:
    d = _obj(d, "dg params", optional=("eps", "d", "H", "k0", "lambda", "R0"))
    kw: dict = {}
    if "eps" in d:
        kw["eps"] = _num(d["eps"], "eps")
    if "d" in d:
        kw["d"] = _num(d["d"], "d")
    if "H" in d:
        kw["H"] = _num(d["H"], "H")
    if "lambda" in d:
        kw["lam"] = _num(d["lambda"], "lambda")
    if "k0" in d:
        k0 = _num(d["k0"], "k0", allow_null=True)
        kw["k0"] = -math.inf if k0 is None else k0
    if "R0" in d:
        R0 = _num(d["R0"], "R0", allow_null=True)
        kw["R0"] = math.inf if R0 is None else R0
    try:
        return DGParams.for_exponents(s, p, n, **kw)
    except ValueError as exc:
        raise ConfigError(f"dg params: {exc}") from exc


_AUDIT_KEYS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "dg": ((), ("params", "sign", "quadrature", "H_budget")),
    "sup_bound": (("x0", "R", "delta"), ("params",)),
    "hoelder": (("x0", "R_max"), ("levels", "alpha_min", "residual_max")),
    "harnack": (("x0", "R"), ("Q_max", "shift")),
    "weak_harnack": (("x0", "R", "q"), ("params", "shift")),
    "growth": (("x0", "R", "delta_grid"), ("params", "gamma", "shift")),
    "tail": (("x0", "R"), ("of",)),
    "iso_frac": (("R", "h_lev", "k_lev"), ("x0", "of")),
    "iso_w1p": (("ell", "m"), ("R", "x0", "of", "p")),
    "minimality": ((), ("trials",)),
}


def parse_audit(d: Any, dim: int) -> dict:
    if not isinstance(d, dict) or d.get("type") not in AUDIT_TYPES:
        raise ConfigError(f"audit: expected an object with type in {AUDIT_TYPES}")
    req, opt = _AUDIT_KEYS[d["type"]]
    _obj(d, f"audit {d['type']}", required=("type",) + req, optional=("name",) + opt)
    out = copy.deepcopy(d)
    for key in ("x0",):
        if key in out:
            out[key] = list(_vec(out[key], f"audit {d['type']}.x0", dim))
    for key in ("R", "R_max", "delta", "h_lev", "k_lev", "ell", "m", "q", "gamma", "shift", "Q_max", "alpha_min",
                "residual_max", "H_budget", "p"):
        if key in out:
            out[key] = _num(out[key], f"audit {d['type']}.{key}")
    if "delta_grid" in out:
        out["delta_grid"] = list(_vec(out["delta_grid"], "audit growth.delta_grid"))
    if "sign" in out and out["sign"] not in ("+", "-", "both"):
        raise ConfigError("audit dg.sign must be '+', '-' or 'both'")
    if "quadrature" in out and out["quadrature"] not in ("lattice", "corrected"):
        raise ConfigError("audit dg.quadrature must be 'lattice' or 'corrected'")
    for key in ("levels", "trials"):
        if key in out and (isinstance(out[key], bool) or not isinstance(out[key], int)):
            raise ConfigError(f"audit {d['type']}.{key}: expected an integer")
    out.setdefault("name", d["type"])
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    grid: Grid
    omega: Region
    u0: GridFunction
    kernel: KernelSpec
    potential: PotentialSpec
    mode: str
    reach: float | None
    solver: SolverOptions
    seed: int | None
    audits: list[dict] = field(default_factory=list)
    out: str | None = None

    def problem(self) -> ProblemSpec:
        return ProblemSpec(self.grid, self.omega, self.u0, self.kernel, self.potential, self.mode, self.solver,
                           self.reach)

    def echo(self) -> dict:
        """The normalised config (overrides applied) as written to the run directory."""
        return self.raw


def parse_config(data: Any, seed: int | None = None, h_override: float | None = None) -> ExperimentConfig:
    """Validate and build a config; ``seed`` and ``h_override`` take precedence over the file."""
    top = _obj(data, "config", required=("problem",), optional=("solver", "seed", "audits", "out"))
    raw = copy.deepcopy(top)
    if seed is None and top.get("seed") is not None:
        if isinstance(top["seed"], bool) or not isinstance(top["seed"], int):
            raise ConfigError("seed: expected an integer")
        seed = top["seed"]
    if seed is not None:
        raw["seed"] = seed
    prob = _obj(top["problem"], "problem", required=("grid", "omega", "u0", "kernel", "potential"),
                optional=("mode", "reach"))
    gd = dict(prob["grid"]) if isinstance(prob["grid"], dict) else prob["grid"]
    if h_override is not None:
        if not isinstance(gd, dict):
            raise ConfigError("grid: expected an object")
        gd["h"] = h_override
        raw["problem"]["grid"]["h"] = h_override
    grid = parse_grid(gd)
    omega = parse_region(prob["omega"], grid.dim)
    u0 = profile_grid_function(grid, prob["u0"])
    kernel = parse_kernel(prob["kernel"], grid.dim)
    potential = parse_potential(prob["potential"])
    mode = prob.get("mode", "minimize")
    if mode not in ("minimize", "equation"):
        raise ConfigError("problem.mode must be 'minimize' or 'equation'")
    reach = _num(prob.get("reach"), "problem.reach", allow_null=True)
    solver = parse_solver(top.get("solver", {}), seed)
    audits_raw = top.get("audits", [])
    if not isinstance(audits_raw, list):
        raise ConfigError("audits: expected a list")
    audits = [parse_audit(a, grid.dim) for a in audits_raw]
    names = [a["name"] for a in audits]
    if len(set(names)) != len(names):
        raise ConfigError("audit names must be unique")
    if seed is None and any(a["type"] in RANDOMIZED_AUDITS for a in audits):
        raise ConfigError("randomized audits need a seed (config 'seed' or --seed)")
    for a in audits:
        if "params" in a:
            parse_dg_params(a["params"], kernel.s, kernel.p, grid.dim)
    cfg = ExperimentConfig(raw, grid, omega, u0, kernel, potential, mode, reach, solver, seed, audits,
                           top.get("out"))
    try:
        cfg.problem()
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from exc
    return cfg


def load_config(path: str | Path, seed: int | None = None, h_override: float | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data, seed, h_override)


def reference_config_path(name: str = "allen_cahn_1d.json") -> Path:
    return Path(__file__).with_name("configs") / name
