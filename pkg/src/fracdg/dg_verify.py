"""Audits of the De Giorgi class inequalities, isoperimetric estimates, the
elementary numeric lemmas and the embedding inequalities used to build the
regularity theory.

Every audit returns an :class:`AuditReport`. Fixed-constant audits pass when
the worst ratio is at most 1; estimation audits report the smallest constant
that makes every sample pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateRegionError, DivergentTailError, HypothesisError
from .lattice import Ball, Box, Grid, GridFunction, Region, extended_lattice, region_cells, unit_ball_volume
from .nonlocal_calculus import (
    OffsetTable,
    abs_power,
    cross_interaction,
    gagliardo_seminorm_p,
    level_set_measure,
    lp_norm_p,
    pair_row_sums,
    power_weight,
    seminorm_values,
    tail,
    tail_integral,
    truncate,
)
from .parallel import map_ordered
from .reports import AuditReport, safe_ratio

LEMMA_IDS = ("interp", "shift", "young", "minpow")
LEMMA_RTOL = 1e-12


@dataclass(frozen=True)
class DGParams:
    """Parameters (d, H, k0, eps, lambda, R0) of a fractional De Giorgi class."""

    eps: float
    d: float = 0.0
    H: float = 1.0
    k0: float = -math.inf
    lam: float = 0.0
    R0: float = math.inf

    def __post_init__(self) -> None:
        if not self.d >= 0:
            raise ValueError("d must be >= 0")
        if not self.H >= 1:
            raise ValueError("H must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not self.R0 > 0:
            raise ValueError("R0 must be positive")
        if math.isnan(self.k0) or self.k0 == math.inf:
            raise ValueError("k0 must be real or -inf")

    @classmethod
    def for_exponents(cls, s: float, p: float, n: int, **kw) -> "DGParams":
        """Parameters with eps = sp/n unless given."""
        kw.setdefault("eps", s * p / n)
        out = cls(**kw)
        out.validate(s, p, n)
        return out

    def validate(self, s: float, p: float, n: int) -> None:
        if self.eps > s * p / n * (1 + 1e-12):
            raise ValueError(f"eps = {self.eps} exceeds sp/n = {s * p / n}")

    def to_dict(self) -> dict:
        return {"eps": self.eps, "d": self.d, "H": self.H, "k0": self.k0, "lam": self.lam, "R0": self.R0}


def _domain(u: GridFunction, omega: Region | None) -> Region:
    g = u.grid
    return omega if omega is not None else Box(g.lo, g.hi)


def _dim(u: GridFunction) -> int:
    return u.grid.dim


# ---------------------------------------------------------------------------
# De Giorgi class membership


def caccioppoli_terms(u: GridFunction, k: float, x0, r: float, R: float, s: float, p: float, params: DGParams,
                      sign: str = "+", omega: Region | None = None, quadrature: str = "lattice") -> dict:
    """Every factor of the class inequality at one configuration, with H = 1 on the right."""
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    g = u.grid
    n = g.dim
    params.validate(s, p, n)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    dom = _domain(u, omega)
    dist = dom.dist_to_boundary(x0)
    if not (0 < r < R < min(params.R0, dist)):
        raise ValueError(f"need 0 < r < R < min(R0, dist) = {min(params.R0, dist)}; got r={r}, R={R}")
    if sign == "+" and k < params.k0:
        raise ValueError(f"k = {k} is below k0 = {params.k0}")
    if sign == "-" and k > -params.k0:
        raise ValueError(f"k = {k} is above -k0 = {-params.k0}")
    w = truncate(u, k, sign)
    Br, BR = Ball(tuple(x0), r), Ball(tuple(x0), R)
    semi = gagliardo_seminorm_p(w, Br, s, p, quadrature=quadrature)
    cross = cross_interaction(u, k, sign, Br, 2.0 * params.R0, s, p)
    level = level_set_measure(u, k, BR, ">" if sign == "+" else "<")
    lp = lp_norm_p(w, BR, p)
    l1 = lp_norm_p(w, BR, 1.0)
    tail_term = (1.0 - s) * tail_integral(w, x0, r, s, p) if l1 > 0 else 0.0
    t1 = (R**params.lam * params.d**p + abs(k) ** p / R ** (n * params.eps)) * level ** (1.0 - s * p / n + params.eps)
    t2 = R ** ((1.0 - s) * p) / (R - r) ** p * lp
    t3 = R ** (n + s * p) / (R - r) ** (n + s * p) * l1 * tail_term
    return {
        "seminorm": semi,
        "cross": cross,
        "lhs": semi + cross,
        "level_measure": level,
        "term_level": t1,
        "term_lp": t2,
        "term_tail": t3,
        "rhs_unit": (t1 + t2 + t3) / (1.0 - s),
    }


def caccioppoli_sides(u: GridFunction, k: float, x0, r: float, R: float, s: float, p: float, params: DGParams,
                      sign: str = "+", omega: Region | None = None, quadrature: str = "lattice") -> tuple[float, float]:
    """(lhs, rhs) of the class inequality at (x0, k, r, R); rhs carries params.H."""
    t = caccioppoli_terms(u, k, x0, r, R, s, p, params, sign, omega, quadrature)
    return t["lhs"], params.H * t["rhs_unit"]


@dataclass(frozen=True)
class PlanEntry:
    x0: tuple[float, ...]
    k: float
    r: float
    R: float

    def key(self) -> tuple:
        return (self.x0, self.k, self.R, self.r)


def _dyadic_below(x: float) -> float:
    """Largest 2^j strictly below x."""
    j = math.floor(math.log2(x))
    out = 2.0**j
    if out >= x:
        out /= 2.0
    return out


def standard_plan(u: GridFunction, omega: Region | None, params: DGParams, sign: str = "+",
                  n_centres: int = 5, n_levels: int = 5, n_radii: int = 5) -> list[PlanEntry]:
    """Deterministic (x0, k, (r, R)) lattice of sample configurations.

    Centres are evenly spaced (in cell order) among Omega cells at least a
    quarter of the largest centre-to-boundary distance from the boundary.
    Levels are the quantiles (j + 1/2)/n_levels of u over Omega, kept when
    admissible for ``sign``. Radius pairs run over dyadic R below
    min(R0, dist(x0)) and r in {R/2, 3R/4}, dropping pairs whose inner ball has
    fewer than two cells.
    """
    g = u.grid
    dom = _domain(u, omega)
    idx = region_cells(g, dom)
    if len(idx) == 0:
        raise DegenerateRegionError("Omega contains no cells")
    pts = g.centers[idx]
    dist = np.array([dom.dist_to_boundary(x) for x in pts])
    cand = idx[dist >= 0.25 * dist.max()]
    pick = cand[np.unique(np.round(np.linspace(0, len(cand) - 1, n_centres)).astype(int))]
    qs = (np.arange(n_levels) + 0.5) / n_levels
    levels = [float(x) for x in np.quantile(u.values[idx], qs)]
    if sign == "+":
        levels = [k for k in levels if k >= params.k0]
    elif sign == "-":
        levels = [k for k in levels if k <= -params.k0]
    plan: list[PlanEntry] = []
    for c in pick:
        x0 = tuple(float(v) for v in g.centers[c])
        top = _dyadic_below(min(params.R0, dom.dist_to_boundary(np.array(x0))))
        pairs = []
        R = top
        while len(pairs) < n_radii and R > g.h:
            for r in (R / 2.0, 0.75 * R):
                if len(pairs) < n_radii and len(region_cells(g, Ball(x0, r))) >= 2:
                    pairs.append((r, R))
            R /= 2.0
        for k in levels:
            for r, R in pairs:
                plan.append(PlanEntry(x0, k, r, R))
    return plan


def audit_dg_membership(u: GridFunction, omega: Region | None, s: float, p: float, params: DGParams,
                        plan: Sequence[PlanEntry] | None = None, sign: str = "+", H_budget: float | None = None,
                        quadrature: str = "lattice") -> AuditReport:
    """Implied H = max over the plan of lhs / rhs(H = 1).

    ``sign`` may be '+', '-' or 'both' (the two one-sided classes audited on
    their own plans). Samples with rhs = 0 and lhs > 0 carry an infinite ratio.
    """
    signs = ("+", "-") if sign == "both" else (sign,)
    rep = AuditReport(f"DG{'' if sign == 'both' else sign}")
    for sg in signs:
        entries = list(plan) if plan is not None else standard_plan(u, omega, params, sg)
        if not entries:
            raise ValueError("sample plan is empty")

        def work(e: PlanEntry, sg: str = sg) -> dict:
            t = caccioppoli_terms(u, e.k, e.x0, e.r, e.R, s, p, params, sg, omega, quadrature)
            ratio = safe_ratio(t["lhs"], t["rhs_unit"])
            return {"sign": sg, "x0": list(e.x0), "k": e.k, "r": e.r, "R": e.R, "lhs": t["lhs"],
                    "rhs": t["rhs_unit"], "ratio": ratio, "seminorm": t["seminorm"], "cross": t["cross"]}

        rep.samples.extend(map_ordered(work, entries))
    ratios = np.array([row["ratio"] for row in rep.samples])
    rep.implied_constant = float(ratios.max())
    rep.worst_ratio = rep.implied_constant if H_budget is None else rep.implied_constant / H_budget
    n_inf = int(np.count_nonzero(np.isinf(ratios)))
    rep.passed = bool(n_inf == 0 and (H_budget is None or rep.implied_constant <= H_budget))
    rep.extra = {"params": params.to_dict(), "s": s, "p": p, "quadrature": quadrature, "infinite_ratios": n_inf,
                 "H_budget": H_budget}
    if n_inf:
        rep.notes.append(f"{n_inf} samples have rhs = 0 with lhs > 0")
    return rep


# ---------------------------------------------------------------------------
# isoperimetric-type inequalities


def _require_2d(u: GridFunction) -> None:
    if u.grid.dim != 2:
        raise ValueError("isoperimetric audits need n = 2")


def isoperimetric_audit_frac(u: GridFunction, R: float, h_lev: float, k_lev: float, s: float, p: float,
                             x0=(0.0, 0.0)) -> AuditReport:
    """Empirical C in the fractional isoperimetric estimate on B_R(x0) (lattice seminorm)."""
    _require_2d(u)
    if not h_lev < k_lev:
        raise ValueError("need h_lev < k_lev")
    n = 2
    B = Ball(tuple(float(v) for v in x0), R)
    low = level_set_measure(u, h_lev, B, "<=")
    high = level_set_measure(u, k_lev, B, ">=")
    idx = region_cells(u.grid, B)
    vals = u.values[idx]
    mid = int(np.count_nonzero((vals > h_lev) & (vals < k_lev))) * u.grid.cell_measure
    semi_p = seminorm_values(u.grid, idx, vals, s, p, quadrature="lattice")
    lhs = (k_lev - h_lev) * (low * high) ** ((n - 1) / n)
    rhs = R ** (n - 2 + s) * (1.0 - s) ** (1.0 / p) * semi_p ** (1.0 / p) * mid ** ((p - 1.0) / p)
    rep = AuditReport("iso_frac")
    ratio = safe_ratio(lhs, rhs)
    rep.samples.append({"h": u.grid.h, "R": R, "h_lev": h_lev, "k_lev": k_lev, "s": s, "p": p, "low": low,
                        "high": high, "mid": mid, "seminorm": semi_p ** (1.0 / p), "lhs": lhs, "rhs": rhs,
                        "ratio": ratio})
    rep.worst_ratio = rep.implied_constant = ratio
    rep.passed = bool(math.isfinite(ratio))
    rep.notes.append("empirical constant; the theoretical constant is not explicit")
    return rep


def isoperimetric_audit_w1p(u: GridFunction, ell: float, m: float, p: float = 2.0, R: float = 1.0,
                            x0=(0.0, 0.0)) -> AuditReport:
    """Empirical C in the classical level-set estimate with central-difference gradients."""
    _require_2d(u)
    if not ell < m:
        raise ValueError("need ell < m")
    g = u.grid
    B = Ball(tuple(float(v) for v in x0), R)
    idx = region_cells(g, B)
    mi = g.multi_index(idx)
    interior = np.all((mi > 0) & (mi < np.array(g.shape) - 1), axis=1)
    if not np.all(interior):
        raise ValueError("B_R must stay one cell away from the box edge for central differences")
    field = u.values.reshape(g.shape)
    grads = np.gradient(field, g.h)
    gnorm = np.sqrt(sum(gr.reshape(-1)[idx] ** 2 for gr in grads))
    grad_lp = float(np.sum(gnorm**p) * g.cell_measure) ** (1.0 / p)
    vals = u.values[idx]
    low = int(np.count_nonzero(vals <= ell)) * g.cell_measure
    high = int(np.count_nonzero(vals >= m)) * g.cell_measure
    mid = int(np.count_nonzero((vals > ell) & (vals < m))) * g.cell_measure
    lhs = (low * high) ** 0.5
    rhs = grad_lp * mid ** ((p - 1.0) / p) / (m - ell)
    ratio = safe_ratio(lhs, rhs)
    rep = AuditReport("iso_w1p")
    rep.samples.append({"h": g.h, "ell": ell, "m": m, "p": p, "low": low, "high": high, "mid": mid,
                        "grad_lp": grad_lp, "lhs": lhs, "rhs": rhs, "ratio": ratio})
    rep.worst_ratio = rep.implied_constant = ratio
    rep.passed = bool(math.isfinite(ratio))
    return rep


# ---------------------------------------------------------------------------
# growth lemma


def _ball_values(u: GridFunction, x0: np.ndarray, rad: float) -> np.ndarray:
    """Values at lattice points of the extended lattice inside B_rad(x0)."""
    g = u.grid
    inside_box = all(x0[i] - rad >= g.lo[i] and x0[i] + rad <= g.hi[i] for i in range(g.dim))
    if inside_box:
        return u.values[region_cells(g, Ball(tuple(x0), rad))]
    lat = extended_lattice(g, rad)
    d2 = np.sum((lat.points - x0) ** 2, axis=1)
    return lat.values(u)[d2 < rad * rad]


def growth_lemma_audit(u: GridFunction, x0, R: float, s: float, p: float, params: DGParams,
                       delta_grid: Sequence[float], gamma: float = 0.5) -> AuditReport:
    """Largest delta in ``delta_grid`` for which the smallness hypothesis holds and min_{B_R} u >= delta."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = u.grid.dim
    rep = AuditReport("growth_lemma")
    if np.any(_ball_values(u, x0, 4.0 * R) < 0):
        rep.applicable = False
        rep.passed = False
        rep.notes.append("u is negative somewhere in B_4R")
        return rep
    b2 = Ball(tuple(x0), 2.0 * R)
    frac = level_set_measure(u, 1.0, b2, ">=") / max(len(region_cells(u.grid, b2)) * u.grid.cell_measure, 1e-300)
    if frac < gamma:
        rep.applicable = False
        rep.passed = False
        rep.notes.append(f"|B_2R cap {{u >= 1}}| / |B_2R| = {frac:.4g} < gamma = {gamma}")
        rep.extra = {"density": frac, "gamma": gamma}
        return rep
    try:
        t_neg = tail(truncate(u, 0.0, "-"), x0, 4.0 * R, s, p)
    except DivergentTailError as exc:
        raise HypothesisError(f"tail of the negative part is not finite: {exc}") from exc
    smallness = R ** ((params.lam + n * params.eps) / p) * params.d + t_neg
    umin = float(np.min(u.values[region_cells(u.grid, Ball(tuple(x0), R))]))
    best = 0.0
    for delta in sorted(float(x) for x in delta_grid):
        hyp = smallness <= delta
        concl = umin >= delta
        rep.samples.append({"delta": delta, "smallness": smallness, "min_BR": umin, "hypothesis": hyp,
                            "conclusion": concl})
        if hyp and concl:
            best = delta
    rep.implied_constant = best
    rep.worst_ratio = 0.0 if best > 0 else math.inf
    rep.passed = best > 0
    rep.extra = {"delta_star": best, "density": frac, "gamma": gamma, "tail_negative": t_neg}
    return rep


# ---------------------------------------------------------------------------
# numeric lemmas


def _pow_diff(x: np.ndarray, y: np.ndarray, p: np.ndarray, diff: np.ndarray | None = None) -> np.ndarray:
    """x^p - y^p for x, y >= 0, accurate when x and y are close.

    ``diff`` is x - y when the caller knows it more accurately than the
    rounded x and y do.
    """
    x, y, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(p, float))
    shape = x.shape
    x, y, p = (np.atleast_1d(v) for v in (x, y, p))
    dx = x - y if diff is None else np.atleast_1d(np.broadcast_to(np.asarray(diff, float), shape))
    out = x**p - y**p
    # cancellation only bites when x and y are close
    near = (y > 0) & (np.abs(dx) <= 0.5 * y)
    out[near] = y[near] ** p[near] * np.expm1(p[near] * np.log1p(dx[near] / y[near]))
    return out.reshape(shape)


def _shift_gap(mu: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|mu a - b| - |a - b| without cancelling b when both signs agree."""
    s1, s2 = mu * a - b, a - b
    out = np.abs(s1) - np.abs(s2)
    both_neg = (s1 <= 0) & (s2 <= 0)
    both_pos = (s1 >= 0) & (s2 >= 0)
    out = np.where(both_neg, (1.0 - mu) * a, out)
    return np.where(both_pos, (mu - 1.0) * a, out)


def lemma_sides(lemma: str, inputs: dict) -> tuple[np.ndarray, np.ndarray]:
    """(favoured side, other side) of a numeric lemma; the lemma says favoured >= other."""
    f = {k: np.asarray(v, dtype=float) for k, v in inputs.items()}
    if lemma == "interp":
        p, a, b, th = f["p"], f["a"], f["b"], f["theta"]
        _check(np.all(p >= 1) and np.all(a >= 0) and np.all(b >= 0) and np.all((th >= 0) & (th <= 1)),
               "interp needs p >= 1, a, b >= 0 and theta in [0, 1]")
        return _pow_diff(a + b, a, p, diff=b), th * p * a ** (p - 1.0) * b + (1.0 - th) * b**p
    if lemma == "shift":
        p, mu, a, b = f["p"], f["mu"], f["a"], f["b"]
        _check(np.all(p >= 1) and np.all(a >= 0) and np.all(b >= 0) and np.all((mu >= 0) & (mu <= 1)),
               "shift needs p >= 1, mu in [0, 1] and a, b >= 0")
        return p * b ** (p - 1.0) * a, _pow_diff(np.abs(mu * a - b), np.abs(a - b), p, diff=_shift_gap(mu, a, b))
    if lemma == "young":
        p, a, b, eps = f["p"], f["a"], f["b"], f["eps"]
        _check(np.all(p > 1) and np.all(a >= b) and np.all(b >= 0) and np.all(eps > 0),
               "young needs p > 1, a >= b >= 0 and eps > 0")
        return eps * a**p + ((p - 1.0) / eps) ** (p - 1.0) * (a - b) ** p, _pow_diff(a, b, p)
    if lemma == "minpow":
        p, a, b = f["p"], f["a"], f["b"]
        _check(np.all(p > 1) and np.all(b >= 0), "minpow needs p > 1 and b >= 0")
        c = np.minimum(1.0, 2.0 ** (2.0 - p))
        return np.maximum(a - b, 0.0) ** (p - 1.0), c * np.maximum(a, 0.0) ** (p - 1.0) - b ** (p - 1.0)
    raise ValueError(f"unknown lemma {lemma!r}; expected one of {LEMMA_IDS}")


def _check(ok: bool, msg: str) -> None:
    if not ok:
        raise ValueError(msg)


def check_numeric_lemma(lemma: str, inputs: dict, flip: bool = False) -> np.ndarray:
    """Signed slack favoured - other (other - favoured when ``flip``); scalars in, 0-d array out."""
    fav, other = lemma_sides(lemma, inputs)
    return other - fav if flip else fav - other


def lemma_holds(lemma: str, inputs: dict, flip: bool = False) -> np.ndarray:
    fav, other = lemma_sides(lemma, inputs)
    slack = other - fav if flip else fav - other
    scale = np.maximum(1.0, np.maximum(np.abs(fav), np.abs(other)))
    return slack >= -LEMMA_RTOL * scale


def lemma_draws(lemma: str, n: int, rng: np.random.Generator) -> dict:
    """Seeded random inputs covering the lemma's range, including endpoint values."""

    def unit(size: int) -> np.ndarray:
        x = rng.uniform(0.0, 1.0, size)
        k = rng.random(size)
        x[k < 0.05] = 0.0
        x[(k >= 0.05) & (k < 0.1)] = 1.0
        return x

    def nonneg(size: int) -> np.ndarray:
        x = 10.0 ** rng.uniform(-3.0, 1.0, size)
        x[rng.random(size) < 0.05] = 0.0
        return x

    p_lo = 1.0 if lemma in ("interp", "shift") else 1.0 + 1e-6
    p = rng.uniform(p_lo, 6.0, n)
    p[rng.random(n) < 0.05] = 2.0
    if lemma in ("interp", "shift"):
        p[rng.random(n) < 0.05] = 1.0
    if lemma == "interp":
        return {"p": p, "a": nonneg(n), "b": nonneg(n), "theta": unit(n)}
    if lemma == "shift":
        return {"p": p, "mu": unit(n), "a": nonneg(n), "b": nonneg(n)}
    if lemma == "young":
        x, y = nonneg(n), nonneg(n)
        return {"p": p, "a": np.maximum(x, y), "b": np.minimum(x, y), "eps": 10.0 ** rng.uniform(-3.0, 3.0, n)}
    if lemma == "minpow":
        a = rng.choice([-1.0, 1.0], n) * nonneg(n)
        return {"p": p, "a": a, "b": nonneg(n)}
    raise ValueError(f"unknown lemma {lemma!r}")


def run_lemma_oracle(lemma: str, draws: int = 100_000, seed: int = 0, flip: bool = False) -> AuditReport:
    """Check a numeric lemma on ``draws`` seeded inputs; ``flip`` is the sign-reversed negative control."""
    rng = np.random.default_rng([seed, LEMMA_IDS.index(lemma)])
    inputs = lemma_draws(lemma, draws, rng)
    fav, other = lemma_sides(lemma, inputs)
    slack = other - fav if flip else fav - other
    scale = np.maximum(1.0, np.maximum(np.abs(fav), np.abs(other)))
    rel = slack / scale
    ok = rel >= -LEMMA_RTOL
    rep = AuditReport(f"lemma_{lemma}{'_flipped' if flip else ''}", seed=seed)
    bad = np.flatnonzero(~ok)
    rep.passed = bool(bad.size == 0)
    rep.worst_ratio = float(-rel.min())
    rep.implied_constant = max(0.0, rep.worst_ratio)
    rep.extra = {"draws": draws, "violations": int(bad.size), "rtol": LEMMA_RTOL}
    i = int(np.argmin(rel))
    rep.samples.append({"worst": True, **{k: float(v[i]) for k, v in inputs.items()},
                        "favoured": float(fav[i]), "other": float(other[i]), "slack": float(slack[i])})
    for j in bad[:5]:
        rep.samples.append({"worst": False, **{k: float(v[j]) for k, v in inputs.items()},
                            "favoured": float(fav[j]), "other": float(other[j]), "slack": float(slack[j])})
    return rep


# ---------------------------------------------------------------------------
# iteration lemma


def iteration_constant(gamma: float, alpha: float, beta: float) -> tuple[float, float]:
    """(theta, C) from the geometric-series argument.

    theta is chosen so that gamma theta^-max(alpha, beta) = (1 + gamma)/2 < 1.
    """
    if not (0 < gamma < 1 and alpha > 0 and beta > 0):
        raise ValueError("need gamma in (0, 1) and alpha, beta > 0")
    theta = (2.0 * gamma / (1.0 + gamma)) ** (1.0 / max(alpha, beta))

    def piece(e: float) -> float:
        q = gamma * theta ** (-e)
        return theta ** (-e) * (1.0 - theta) ** (-e) / (1.0 - q)

    return theta, max(1.0 / (1.0 - gamma), piece(alpha), piece(beta))


def check_iteration_lemma(phi: Callable[[np.ndarray], np.ndarray] | np.ndarray, r: float, R: float,
                          A: float, B: float, D: float, alpha: float, beta: float, gamma: float,
                          points: int = 20) -> AuditReport:
    """Verify the hypothesis on all sampled pairs rho < tau, then the conclusion at every sampled r' < R.

    ``phi`` is a callable or an array of values on ``points`` equispaced nodes of [r, R].
    """
    if not (0 < r < R):
        raise ValueError("need 0 < r < R")
    if min(A, B, D, alpha, beta) <= 0:
        raise ValueError("A, B, D, alpha, beta must be positive")
    t = np.linspace(r, R, points)
    vals = np.asarray(phi(t) if callable(phi) else phi, dtype=float)
    if vals.shape != t.shape:
        raise ValueError(f"phi needs {points} samples")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("phi must be finite and nonnegative")
    theta, C = iteration_constant(gamma, alpha, beta)
    rep = AuditReport("iteration_lemma")
    i, j = np.triu_indices(points, 1)
    gap = t[j] - t[i]
    hyp_rhs = gamma * vals[j] + A + B / gap**alpha + D / gap**beta
    viol = vals[i] > hyp_rhs * (1 + 1e-12)
    rep.extra = {"theta": theta, "C": C, "pairs": int(len(i))}
    if np.any(viol):
        a = int(np.flatnonzero(viol)[0])
        rep.applicable = False
        rep.passed = False
        rep.notes.append(f"hypothesis fails at rho={t[i[a]]:.6g}, tau={t[j[a]]:.6g}")
        return rep
    worst = 0.0
    for a in range(points - 1):
        gap = R - t[a]
        core = A + B / gap**alpha + D / gap**beta
        ratio = safe_ratio(float(vals[a]), core)
        rep.samples.append({"r": float(t[a]), "phi": float(vals[a]), "core": core, "bound": C * core, "ratio": ratio})
        worst = max(worst, ratio)
    rep.implied_constant = worst
    rep.worst_ratio = worst / C
    rep.passed = bool(worst <= C)
    return rep


# ---------------------------------------------------------------------------
# embedding constants


def _ball_seminorm_p(u: GridFunction, B: Ball, s: float, p: float) -> float:
    return gagliardo_seminorm_p(u, B, s, p, quadrature="lattice")


def _zero_fraction(u: GridFunction, B: Ball) -> float:
    idx = region_cells(u.grid, B)
    return float(np.count_nonzero(u.values[idx] == 0.0)) / max(len(idx), 1)


def _pair_sum(u: GridFunction, outer: np.ndarray, inner: np.ndarray, q: float, expo: float) -> float:
    """sum_{x in inner} sum_{y in outer, y != x} |u(x) - u(y)|^q |x - y|^-(n+expo) h^(2n)."""
    g = u.grid
    ia, ib = g.multi_index(inner), g.multi_index(outer)
    extent = tuple(int(e) for e in np.maximum(ia.max(axis=0) - ib.min(axis=0), ib.max(axis=0) - ia.min(axis=0)))
    table = OffsetTable.build(g.h, extent, power_weight(g.dim, expo))
    rows = pair_row_sums(ia, u.values[inner], ib, u.values[outer], table, abs_power(q))
    return float(np.sum(rows)) * g.h ** (2 * g.dim)


def estimate_embedding_constants(family: Sequence[GridFunction], s: float, p: float, which: str, R: float = 1.0,
                                 x0=None, gamma: float = 0.25, r: float | None = None, sigma: float | None = None,
                                 delta: float | None = None, q: float | None = None,
                                 inner: Region | None = None, outer: Region | None = None) -> AuditReport:
    """Empirical constants (poincare, sobolev, sobolev_supported) or explicit-constant audits
    (lower_order, lower_order_q) over a family of lattice functions on B_R(x0).

    Members violating the hypothesis are skipped and logged in the report notes.
    """
    kinds = ("poincare", "sobolev", "sobolev_supported", "lower_order", "lower_order_q")
    if which not in kinds:
        raise ValueError(f"which must be one of {kinds}")
    rep = AuditReport(f"embedding_{which}")
    explicit = which in ("lower_order", "lower_order_q")
    worst = 0.0
    for j, u in enumerate(family):
        g = u.grid
        n = g.dim
        c = tuple(float(v) for v in (x0 if x0 is not None else np.zeros(n)))
        B = Ball(c, R)
        row: dict = {"member": j, "h": g.h}
        if which == "poincare":
            frac = _zero_fraction(u, B)
            if frac < gamma:
                rep.notes.append(f"member {j} skipped: zero fraction {frac:.3g} < gamma {gamma}")
                continue
            lhs = lp_norm_p(u, B, p)
            rhs = (1.0 - s) * R ** (s * p) * _ball_seminorm_p(u, B, s, p)
            row.update({"zero_fraction": frac})
        elif which in ("sobolev", "sobolev_supported"):
            if not n > s * p:
                raise ValueError("Sobolev audits need n > sp")
            pstar = n * p / (n - s * p)
            idx = region_cells(g, B)
            if which == "sobolev":
                frac = _zero_fraction(u, B)
                if frac < gamma:
                    rep.notes.append(f"member {j} skipped: zero fraction {frac:.3g} < gamma {gamma}")
                    continue
                extra = 0.0
                row.update({"zero_fraction": frac})
            else:
                if r is None or not 0 < r < R:
                    raise ValueError("sobolev_supported needs 0 < r < R")
                d2 = np.sum((g.centers[idx] - np.array(c)) ** 2, axis=1)
                if np.any(u.values[idx][d2 >= r * r] != 0.0) or np.any(np.delete(u.values, idx) != 0.0):
                    rep.notes.append(f"member {j} skipped: support not inside B_r")
                    continue
                extra = lp_norm_p(u, Ball(c, r), p) / (R - r) ** (s * p)
            lhs = float(np.sum(np.abs(u.values[idx]) ** pstar) * g.cell_measure) ** (p / pstar)
            rhs = (1.0 - s) / (n - s * p) ** (p - 1.0) * (_ball_seminorm_p(u, B, s, p) + extra)
        elif which == "lower_order":
            if sigma is None or delta is None or not (0 < sigma <= s):
                raise ValueError("lower_order needs 0 < sigma <= s and delta > 0")
            lhs = _ball_seminorm_p(u, B, sigma, p)
            chi = 1.0 if 0 < delta < 2.0 * R else 0.0
            # the exterior integral of |z|^-(n + sigma p) over |z| > delta is n|B_1| delta^-(sigma p) / (sigma p)
            const = 2.0**p * n * unit_ball_volume(n) / (sigma * p)
            rhs = delta ** ((s - sigma) * p) * _ball_seminorm_p(u, B, s, p) + \
                const * chi * delta ** (-sigma * p) * lp_norm_p(u, B, p)
            row.update({"sigma": sigma, "delta": delta})
        else:
            if q is None or sigma is None or not (1 <= q < p and 0 < sigma < s):
                raise ValueError("lower_order_q needs 1 <= q < p and 0 < sigma < s")
            Om = outer if outer is not None else B
            Omp = inner if inner is not None else B
            io, ii = region_cells(g, Om), region_cells(g, Omp)
            if not np.all(np.isin(ii, io)):
                raise ValueError("inner region must lie inside the outer region")
            pts = g.centers[io]
            diam = float(np.sqrt(max(np.max(np.sum((pts - pts[i]) ** 2, axis=1)) for i in
                                     _hull_candidates(pts))))
            C0 = (n * (p - q) / ((s - sigma) * p * q) * unit_ball_volume(n)) ** ((p - q) / (p * q))
            lhs = _pair_sum(u, io, ii, q, sigma * q) ** (1.0 / q)
            rhs = C0 * (len(ii) * g.cell_measure) ** ((p - q) / (p * q)) * diam ** (s - sigma) * \
                _pair_sum(u, io, ii, p, s * p) ** (1.0 / p)
            row.update({"q": q, "sigma": sigma, "diam": diam})
        ratio = safe_ratio(lhs, rhs)
        row.update({"lhs": lhs, "rhs": rhs, "ratio": ratio})
        rep.samples.append(row)
        worst = max(worst, ratio)
    rep.worst_ratio = worst
    rep.implied_constant = worst
    if explicit:
        rep.passed = bool(worst <= 1.0 + 1e-12)
    else:
        rep.passed = bool(math.isfinite(worst)) and len(rep.samples) > 0
        rep.notes.append("empirical constant over the family")
    rep.extra = {"s": s, "p": p, "R": R, "gamma": gamma, "members": len(family), "used": len(rep.samples)}
    return rep


def _hull_candidates(pts: np.ndarray) -> list[int]:
    """Indices of extreme points along a few directions (diameter is attained among them)."""
    n = pts.shape[1]
    dirs = [np.eye(n)[i] for i in range(n)]
    if n == 2:
        dirs += [np.array([1.0, 1.0]), np.array([1.0, -1.0])]
        ang = np.linspace(0, np.pi, 64, endpoint=False)
        dirs += [np.array([math.cos(a), math.sin(a)]) for a in ang]
    out = set()
    for d in dirs:
        proj = pts @ d
        out.add(int(np.argmax(proj)))
        out.add(int(np.argmin(proj)))
    return sorted(out)
