"""Measured regularity: sup bounds, Hoelder exponents and Harnack quotients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dg_verify import DGParams, _ball_values
from .errors import DegenerateRegionError, DivergentTailError, HypothesisError
from .kernels import KernelSpec
from .lattice import Ball, Box, GridFunction, Region, region_cells
from .nonlocal_calculus import mean_power, tail, truncate
from .reports import AuditReport, safe_ratio


def _domain(u: GridFunction, omega: Region | None) -> Region:
    return omega if omega is not None else Box(u.grid.lo, u.grid.hi)


def _require_inside(u: GridFunction, omega: Region | None, x0: np.ndarray, rad: float, what: str) -> None:
    dom = _domain(u, omega)
    if not rad < dom.dist_to_boundary(x0) * (1 + 1e-12):
        raise ValueError(f"{what} = B_{rad:g}(x0) does not fit inside Omega")


def _ball(u: GridFunction, x0: np.ndarray, rad: float) -> np.ndarray:
    idx = region_cells(u.grid, Ball(tuple(x0), rad))
    if len(idx) == 0:
        raise DegenerateRegionError(f"B_{rad:g} contains no cells")
    return u.values[idx]


def _negative_tail(u: GridFunction, x0: np.ndarray, R: float, s: float, p: float) -> float:
    try:
        return tail(truncate(u, 0.0, "-"), x0, R, s, p)
    except DivergentTailError as exc:
        raise HypothesisError(f"tail of the negative part is not finite: {exc}") from exc


def sup_bound_report(u: GridFunction, x0, R: float, s: float, p: float, params: DGParams, delta: float,
                     omega: Region | None = None) -> AuditReport:
    """Implied C in the local sup bound for (u - k0)_+ on B_R(x0).

    The level used is max(k0, 0): a class with k0 = -inf is contained in the
    class with k0 = 0. When n = sp the free exponent theta is set to eps/2.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = u.grid.dim
    params.validate(s, p, n)
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    _require_inside(u, omega, x0, 2.0 * R, "B_2R")
    k0 = max(params.k0, 0.0)
    theta = 0.0 if n > s * p * (1 + 1e-12) else params.eps / 2.0
    w = truncate(u, k0, "+")
    sup = float(np.max(_ball(w, x0, R)))
    mean = mean_power(w, Ball(tuple(x0), 2.0 * R), p)
    t_plus = tail(w, x0, R, s, p)
    expo = (p - 1.0) / ((params.eps - theta) * p)
    pfac = delta ** (-expo) / (n - s * p + n * theta) ** expo
    data = R ** ((params.lam + n * params.eps) / p) * params.d + k0
    rest = delta * t_plus + delta ** ((p - 1.0) / p) * data
    C = safe_ratio(max(sup - rest, 0.0), pfac * mean)
    rep = AuditReport("sup_bound")
    rep.samples.append({"x0": list(x0), "R": R, "delta": delta, "sup": sup, "mean_p": mean, "tail_plus": t_plus,
                        "data_term": data, "prefactor": pfac, "ratio": C})
    rep.implied_constant = rep.worst_ratio = C
    rep.passed = bool(math.isfinite(C))
    rep.extra = {"k0_used": k0, "theta": theta, "params": params.to_dict()}
    return rep


@dataclass
class HoelderFit:
    """Least-squares fit osc(u, B_r) ~ C r^alpha over radii R_max 4^-i."""

    alpha: float
    C: float
    residual: float
    radii: list[float] = field(default_factory=list)
    oscillations: list[float] = field(default_factory=list)
    clipped: bool = False
    undefined: bool = False
    raw_alpha: float = math.nan

    def as_tuple(self) -> tuple[float, float, float]:
        return self.alpha, self.C, self.residual

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "C": self.C, "residual": self.residual, "raw_alpha": self.raw_alpha,
                "clipped": self.clipped, "undefined": self.undefined, "radii": self.radii,
                "oscillations": self.oscillations}


def hoelder_fit(u: GridFunction, x0, R_max: float, levels: int = 4, omega: Region | None = None) -> HoelderFit:
    """Fit log osc against log r on r_i = R_max 4^-i, i < levels.

    Every ball must hold at least 4 cells. The residual is the RMS misfit in
    log space. alpha outside [0, 1] is clipped and flagged; a constant u has
    no defined exponent.
    """
    if levels < 4:
        raise ValueError("levels must be at least 4")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if omega is not None:
        _require_inside(u, omega, x0, R_max, "B_Rmax")
    radii = [R_max * 4.0 ** (-i) for i in range(levels)]
    osc = []
    for r in radii:
        vals = _ball(u, x0, r)
        if len(vals) < 4:
            raise DegenerateRegionError(f"B_{r:g} holds {len(vals)} cells; refine h or enlarge R_max")
        osc.append(float(vals.max() - vals.min()))
    if min(osc) <= 0.0:
        return HoelderFit(math.nan, math.nan, math.nan, radii, osc, undefined=True)
    lr, lo = np.log(radii), np.log(osc)
    slope, icept = np.polyfit(lr, lo, 1)
    resid = float(np.sqrt(np.mean((lo - (slope * lr + icept)) ** 2)))
    alpha = float(min(max(slope, 0.0), 1.0))
    return HoelderFit(alpha, float(math.exp(icept)), resid, radii, osc, clipped=alpha != slope,
                      raw_alpha=float(slope))


def _forcing_term(R: float, s: float, p: float, sup_value: float, mode: str) -> float:
    if sup_value < 0:
        raise ValueError("the sup of |F| or |f| must be nonnegative")
    if mode == "minimizer":
        return R**s * sup_value ** (1.0 / p)
    if mode == "solution":
        return R ** (s * p / (p - 1.0)) * sup_value ** (1.0 / (p - 1.0))
    raise ValueError("mode must be 'minimizer' or 'solution'")


def harnack_quotient(u: GridFunction, x0, R: float, s: float, p: float, sup_value: float, mode: str = "solution",
                     omega: Region | None = None, kernel: KernelSpec | None = None) -> AuditReport:
    """Q = sup_{B_R} u / (inf_{B_R} u + Tail(u_-; x0, R) + forcing term)."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    dom = _domain(u, omega)
    if np.any(u.values[region_cells(u.grid, dom)] < 0):
        raise HypothesisError("u must be nonnegative in Omega")
    _require_inside(u, omega, x0, 2.0 * R, "B_2R")
    forcing = _forcing_term(R, s, p, sup_value, mode)
    vals = _ball(u, x0, R)
    sup, inf = float(vals.max()), float(vals.min())
    t_neg = _negative_tail(u, x0, R, s, p)
    den = inf + t_neg + forcing
    Q = safe_ratio(sup, den)
    rep = AuditReport("harnack")
    rep.samples.append({"x0": list(x0), "R": R, "sup": sup, "inf": inf, "tail_negative": t_neg, "forcing": forcing,
                        "ratio": Q})
    rep.implied_constant = rep.worst_ratio = Q
    rep.passed = bool(math.isfinite(Q))
    rep.extra = {"mode": mode, "s": s, "p": p}
    if kernel is not None and not kernel.globally_elliptic_by_construction:
        rep.notes.append("kernel is not elliptic on all of R^n by construction; the Harnack constant may not apply")
    return rep


def weak_harnack_report(u: GridFunction, x0, R: float, s: float, p: float, params: DGParams, q_exp: float,
                        omega: Region | None = None) -> AuditReport:
    """Implied C in (avg_{B_R} u^q)^(1/q) <= C (inf_{B_R} u + Tail(u_-; x0, R) + R^((lam + n eps)/p) d)."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = u.grid.dim
    params.validate(s, p, n)
    if not q_exp > 0:
        raise ValueError("q_exp must be positive")
    if np.any(_ball_values(u, x0, 16.0 * R) < 0):
        raise HypothesisError("u must be nonnegative in B_16R")
    lhs = mean_power(u, Ball(tuple(x0), R), q_exp)
    inf = float(np.min(_ball(u, x0, R)))
    t_neg = _negative_tail(u, x0, R, s, p)
    data = R ** ((params.lam + n * params.eps) / p) * params.d
    rhs = inf + t_neg + data
    C = safe_ratio(lhs, rhs)
    rep = AuditReport("weak_harnack")
    rep.samples.append({"x0": list(x0), "R": R, "q": q_exp, "mean_q": lhs, "inf": inf, "tail_negative": t_neg,
                        "data_term": data, "lhs": lhs, "rhs": rhs, "ratio": C})
    rep.implied_constant = rep.worst_ratio = C
    rep.passed = bool(math.isfinite(C))
    return rep
