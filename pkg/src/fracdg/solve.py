"""Discrete minimizers (cyclic coordinate descent) and weak solutions (nonlinear Gauss-Seidel)."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .energy import EnergyBreakdown, InteractionSystem, energy, interaction_system
from .errors import DivergenceError, UnsupportedOperationError
from .kernels import KernelSpec
from .lattice import Grid, GridFunction, Region, region_cells
from .potentials import PotentialSpec
from .reports import AuditReport
from . import _kernels as ck


@dataclass(frozen=True)
class SolverOptions:
    max_sweeps: int = 5000
    tol_u: float = 1e-8
    tol_E: float = 1e-12
    line_search_points: int = 9
    line_search_tol: float = 1e-12
    bracket_width: float = 0.5
    seed: int = 0
    init: str = "shell_mean"
    relaxation: float = 1.0

    def __post_init__(self) -> None:
        if self.tol_u <= 0 or self.tol_E <= 0 or self.line_search_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.line_search_points < 3:
            raise ValueError("line_search_points must be at least 3")
        if self.bracket_width <= 0:
            raise ValueError("bracket_width must be positive")
        if self.init not in ("shell_mean", "random", "u0"):
            raise ValueError(f"unknown init {self.init!r}")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must lie in (0, 2)")


@dataclass(frozen=True)
class ProblemSpec:
    """Exterior data ``u0`` is used outside Omega; its values inside Omega seed the ``u0`` init."""

    grid: Grid
    omega: Region
    u0: GridFunction
    kernel: KernelSpec
    potential: PotentialSpec
    mode: str = "minimize"
    solver: SolverOptions = field(default_factory=SolverOptions)
    reach: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("minimize", "equation"):
            raise ValueError("mode must be 'minimize' or 'equation'")
        if self.u0.grid != self.grid:
            raise ValueError("u0 lives on a different grid")
        idx = region_cells(self.grid, self.omega)
        if len(idx) == 0:
            raise ValueError("Omega contains no cells")
        mi = self.grid.multi_index(idx)
        if np.any(mi == 0) or np.any(mi == np.asarray(self.grid.shape) - 1):
            raise ValueError("Omega must leave at least one layer of exterior cells inside the box")


@dataclass
class SolveReport:
    iterations: int
    energy: EnergyBreakdown | None
    max_update: float
    wall_time: float
    converged: bool
    minimality: dict | None = None
    trajectory: list[float] = field(default_factory=list)
    updates: list[float] = field(default_factory=list)
    max_residual: float | None = None
    message: str = ""
    init: str = ""

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "energy": self.energy.to_dict() if self.energy else None,
            "max_update": self.max_update,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "minimality": self.minimality,
            "max_residual": self.max_residual,
            "message": self.message,
            "init": self.init,
        }


# ---------------------------------------------------------------------------
# shared helpers


def _omega_mask(prob: ProblemSpec) -> np.ndarray:
    mask = np.zeros(prob.grid.n_cells, dtype=bool)
    mask[region_cells(prob.grid, prob.omega)] = True
    return mask


def initial_values(prob: ProblemSpec) -> np.ndarray:
    """Values on the grid: u0 outside Omega, the chosen initial guess inside."""
    opt = prob.solver
    mask = _omega_mask(prob)
    vals = np.array(prob.u0.values, dtype=float)
    if opt.init == "u0":
        return vals
    shape = prob.grid.shape
    m = mask.reshape(shape)
    shell = ndimage.binary_dilation(m, structure=np.ones((3,) * prob.grid.dim, dtype=bool)) & ~m
    ring = vals[shell.ravel()]
    if opt.init == "shell_mean":
        vals[mask] = float(np.mean(ring))
    else:
        rng = np.random.default_rng(opt.seed)
        lo, hi = float(np.min(ring)), float(np.max(ring))
        vals[mask] = rng.uniform(lo, hi, size=int(mask.sum()))
    return vals


class _Coordinates:
    """Single-coordinate restrictions of the energy and of the weak residual.

    phi_a(t) = (1/p) sum_m W_am |t - v_m|^p + h^n F(t) up to a constant, and
    r_a(t) = phi_a'(t) = sum_m W_am g(t - v_m) + h^n f(t). For p = 2 the row
    data collapse to A_a = sum_m W_am and B_a = sum_m W_am v_m, with B kept
    current by rank-one updates inside the compiled sweeps.
    """

    def __init__(self, system: InteractionSystem, potential: PotentialSpec, v: np.ndarray):
        self.sys = system
        self.p = float(system.kernel.p)
        self.hn = system.grid.cell_measure
        self.v = v
        self.quad = self.p == 2.0
        self.W = np.ascontiguousarray(system.W)
        self.Wo = np.ascontiguousarray(system.W[:, system.omega_pos])
        self.pos = np.ascontiguousarray(system.omega_pos, dtype=np.int64)
        self.code, prm, self.pxF, self.pcF, self.pxf, self.pcf = potential.compiled()
        self.d, self.l1, self.l2 = (float(x) for x in prm)
        self.A = system.W.sum(axis=1)
        self.B = np.zeros(system.n_omega)
        self.refresh()

    def refresh(self) -> None:
        if self.quad:
            self.B = self.W @ self.v

    def coord_min(self, a: int, t0: float, opt: SolverOptions) -> tuple[float, float]:
        t, df, status = ck.coord_min(a, t0, self.quad, self.A, self.B, self.W, self.v, self.p, self.hn,
                                     self.code, self.d, self.l1, self.l2, self.pxF, self.pcF, opt.line_search_points,
                                     opt.bracket_width, opt.line_search_tol)
        if status != ck.STATUS_OK:
            raise DivergenceError(f"coordinate search at cell {a} hit the bracket edge after 2 expansions")
        return t, df

    def sweep_minimize(self, opt: SolverOptions) -> tuple[float, float]:
        upd, change, status, bad = ck.sweep_minimize(self.quad, self.A, self.B, self.W, self.Wo, self.v, self.pos, self.p,
                                             self.hn, self.code, self.d, self.l1, self.l2, self.pxF, self.pcF,
                                             opt.line_search_points, opt.bracket_width, opt.line_search_tol,
                                             opt.relaxation)
        if status != ck.STATUS_OK:
            raise DivergenceError(
                f"coordinate search at cell {int(self.sys.omega_idx[bad])} hit the bracket edge after 2 expansions;"
                " the energy looks unbounded below"
            )
        return upd, change

    def sweep_equation(self, opt: SolverOptions, step: float) -> tuple[float, bool]:
        upd, nonmono, status, bad = ck.sweep_equation(self.quad, self.A, self.B, self.W, self.Wo, self.v, self.pos,
                                                      self.p, self.hn, self.code, self.d, self.pxf, self.pcf,
                                                      opt.line_search_points, opt.bracket_width,
                                                      opt.line_search_tol, step)
        if status != ck.STATUS_OK:
            raise DivergenceError(f"no sign change of the residual at cell {int(self.sys.omega_idx[bad])}")
        return upd, nonmono

    def max_relative_residual(self) -> float:
        return float(ck.max_relative_residual(self.quad, self.A, self.B, self.W, self.v, self.pos, self.p, self.hn,
                                              self.code, self.d, self.pxf, self.pcf))

    def interaction(self) -> float:
        return float(ck.interaction_energy(self.W, self.sys.factor, self.v, self.pos, self.p))

    def potential_energy(self) -> float:
        return float(ck.potential_sum(self.v, self.pos, self.code, self.d, self.l1, self.l2, self.pxF, self.pcF)) * self.hn


def _finish(u_vals: np.ndarray, prob: ProblemSpec) -> GridFunction:
    return GridFunction(prob.grid, u_vals, prob.u0.exterior)


_RATE_WINDOW = 20
_RESYNC = 50


def _floor(opt: SolverOptions, v: np.ndarray) -> float:
    """Update size the scalar searches cannot resolve below."""
    return max(1e-3 * opt.tol_u, 30.0 * opt.line_search_tol * max(1.0, float(np.max(np.abs(v)))))


def _stop(updates: list[float], opt: SolverOptions, floor: float = 0.0) -> bool:
    """max update below tol_u, and so is its geometric-series extrapolation.

    The contraction rate is the geometric mean of update ratios over the last
    sweeps (single ratios are noisy under over-relaxation). Updates at or below
    ``floor`` count as converged whatever the rate, since that is the
    resolution of the scalar searches.
    """
    upd = updates[-1]
    if upd >= opt.tol_u:
        return False
    if upd <= max(floor, 1e-3 * opt.tol_u):
        return True
    if len(updates) <= _RATE_WINDOW:
        return False
    past = updates[-1 - _RATE_WINDOW]
    if past <= 0.0:
        return True
    rho = min((upd / past) ** (1.0 / _RATE_WINDOW), 0.999999)
    return upd * rho / (1.0 - rho) < opt.tol_u


def minimize(prob: ProblemSpec) -> tuple[GridFunction, SolveReport]:
    """Cyclic coordinate descent in lexicographic cell order.

    The trajectory records the energy after every sweep, tracked from the exact
    per-coordinate changes and resynchronised with a full evaluation every
    ``_RESYNC`` sweeps. Stopping needs the max update and its geometric
    extrapolation below tol_u and the sweep energy decrease below tol_E.
    """
    if prob.mode != "minimize":
        raise ValueError("minimize needs mode='minimize'")
    opt = prob.solver
    t_start = time.perf_counter()
    system = interaction_system(prob.grid, prob.omega, prob.kernel, prob.reach)
    vals = initial_values(prob)
    v = system.lattice_values(_finish(vals, prob))
    co = _Coordinates(system, prob.potential, v)
    floor = _floor(opt, v)
    e_prev = co.interaction() + co.potential_energy()
    traj = [e_prev]
    updates: list[float] = []
    converged = False
    message = ""
    sweeps = 0
    for sweeps in range(1, opt.max_sweeps + 1):
        max_upd, change = co.sweep_minimize(opt)
        if sweeps % _RESYNC == 0:
            co.refresh()
            e_new = co.interaction() + co.potential_energy()
        else:
            e_new = e_prev + change
        if e_new > e_prev + 1e-12 * abs(e_prev) and not message:
            message = f"energy increased at sweep {sweeps}"
        traj.append(e_new)
        updates.append(max_upd)
        decrease = e_prev - e_new
        e_prev = e_new
        if _stop(updates, opt, floor) and decrease < opt.tol_E:
            converged = True
            break
    co.refresh()
    traj[-1] = co.interaction() + co.potential_energy()
    vals[system.omega_idx] = v[system.omega_pos]
    u = _finish(vals, prob)
    report = SolveReport(
        iterations=sweeps,
        energy=energy(u, prob.omega, prob.kernel, prob.potential, prob.reach),
        max_update=updates[-1] if updates else 0.0,
        wall_time=time.perf_counter() - t_start,
        converged=converged,
        trajectory=traj,
        updates=updates,
        message=message or ("converged" if converged else "max_sweeps reached"),
        init=opt.init,
    )
    return u, report


# ---------------------------------------------------------------------------
# equation mode


def solve_equation(prob: ProblemSpec) -> tuple[GridFunction, SolveReport]:
    """Nonlinear Gauss-Seidel on the per-cell equation sum_y g(u(x) - u(y)) K h^n + f(u(x)) = 0.

    Each cell value is the bisection root of its (increasing) residual map; the
    residual tested against the hat function of cell x is h^n times the
    left-hand side. A detected non-monotone scalar map halves the step for the
    rest of the run; if the iteration still fails the report says so.
    """
    if prob.mode != "equation":
        raise ValueError("solve_equation needs mode='equation'")
    if not prob.potential.differentiable:
        raise UnsupportedOperationError(f"potential {prob.potential.variant!r} has no f; use minimize")
    opt = prob.solver
    t_start = time.perf_counter()
    system = interaction_system(prob.grid, prob.omega, prob.kernel, prob.reach)
    vals = initial_values(prob)
    v = system.lattice_values(_finish(vals, prob))
    co = _Coordinates(system, prob.potential, v)
    floor = _floor(opt, v)
    damping = 1.0
    updates: list[float] = []
    converged = False
    message = ""
    sweeps = 0
    rel_res = math.inf
    for sweeps in range(1, opt.max_sweeps + 1):
        max_upd, nonmono = co.sweep_equation(opt, damping * opt.relaxation)
        if nonmono and damping == 1.0:
            damping = 0.5
            message = f"non-monotone scalar map in sweep {sweeps}; damping enabled"
        if sweeps % _RESYNC == 0:
            co.refresh()
        updates.append(max_upd)
        if _stop(updates, opt, floor):
            co.refresh()
            rel_res = co.max_relative_residual()
            if rel_res <= opt.tol_E or max_upd <= floor:
                converged = True
                if rel_res > opt.tol_E:
                    message = (message + "; " if message else "") + (
                        f"relative residual {rel_res:.2e} is at the root-finder resolution")
                break
    if not converged:
        rel_res = co.max_relative_residual()
        message = (message + "; " if message else "") + "max_sweeps reached"
    vals[system.omega_idx] = v[system.omega_pos]
    u = _finish(vals, prob)
    report = SolveReport(
        iterations=sweeps,
        energy=energy(u, prob.omega, prob.kernel, prob.potential, prob.reach),
        max_update=updates[-1] if updates else 0.0,
        wall_time=time.perf_counter() - t_start,
        converged=converged,
        updates=updates,
        max_residual=rel_res,
        message=message or "converged",
        init=opt.init,
    )
    return u, report


def solve(prob: ProblemSpec) -> tuple[GridFunction, SolveReport]:
    return minimize(prob) if prob.mode == "minimize" else solve_equation(prob)


# ---------------------------------------------------------------------------
# minimality audit


def verify_minimality(u: GridFunction, prob: ProblemSpec, trials: int = 40, seed: int = 0) -> AuditReport:
    """Compare E(u) against lattice competitors v = u off Omega.

    Every Omega cell gets an exact single-coordinate search; ``trials`` further
    competitors are random smooth bumps and truncation moves u -/+ eta (u - k)_+/-.
    A competitor violates minimality when it lowers the energy by more than
    10 tol_E.
    """
    opt = prob.solver
    slack = 10.0 * opt.tol_E
    rep = AuditReport("minimality", seed=seed)
    system = interaction_system(prob.grid, prob.omega, prob.kernel, prob.reach)
    mask = _omega_mask(prob)
    outside = ~mask
    if np.any(u.values[outside] != prob.u0.values[outside]):
        raise ValueError("u must agree with u0 outside Omega")
    v = system.lattice_values(u)
    co = _Coordinates(system, prob.potential, v.copy())
    worst = 0.0
    worst_row: dict = {}
    for a in range(system.n_omega):
        t0 = float(co.v[system.omega_pos[a]])
        try:
            t1, df = co.coord_min(a, t0, opt)
        except DivergenceError:
            t1, df = t0, -math.inf
        drop = -df
        if drop > worst:
            worst = drop
            worst_row = {"kind": "cell", "cell": int(system.omega_idx[a]), "from": t0, "to": t1, "energy_drop": drop}
    rep.samples.append({"kind": "cells", "count": int(system.n_omega), "worst_drop": worst})
    e0 = energy(u, prob.omega, prob.kernel, prob.potential, prob.reach).total
    rng = np.random.default_rng(seed)
    pts = prob.grid.centers
    idx = system.omega_idx
    ou = u.values[idx]
    for t in range(trials):
        vals = np.array(u.values)
        if t % 2 == 0:
            c = pts[rng.choice(idx)]
            width = rng.uniform(2.0, 8.0) * prob.grid.h
            eta = rng.choice([-1.0, 1.0]) * rng.uniform(0.01, 0.3)
            bump = np.exp(-np.sum((pts - c) ** 2, axis=1) / (2 * width**2))
            vals[mask] += eta * bump[mask]
            desc = {"kind": "bump", "center": c.tolist(), "width": width, "eta": eta}
        else:
            k = float(np.quantile(ou, rng.uniform(0.0, 1.0)))
            eta = rng.uniform(0.05, 1.0)
            if rng.random() < 0.5:
                vals[mask] -= eta * np.maximum(vals[mask] - k, 0.0)
                desc = {"kind": "truncation+", "k": k, "eta": eta}
            else:
                vals[mask] += eta * np.maximum(k - vals[mask], 0.0)
                desc = {"kind": "truncation-", "k": k, "eta": eta}
        e1 = energy(u.with_values(vals), prob.omega, prob.kernel, prob.potential, prob.reach).total
        drop = e0 - e1
        desc.update({"energy_drop": drop})
        rep.samples.append(desc)
        if drop > worst:
            worst = drop
            worst_row = desc
    rep.worst_ratio = worst
    rep.implied_constant = worst
    rep.passed = bool(worst <= slack)
    rep.extra = {"slack": slack, "worst": worst_row, "trials": trials}
    rep.notes.append("competitors are lattice perturbations only")
    return rep
