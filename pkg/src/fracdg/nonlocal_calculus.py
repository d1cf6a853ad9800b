"""Seminorms, cross interactions, tails, truncations and level sets on lattices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import mpmath
import numpy as np

from .errors import DegenerateRegionError
from .lattice import Ball, ExteriorExtension, Grid, GridFunction, Region, extended_lattice, region_cells
from .parallel import map_ordered

PAIR_BLOCK_ELEMENTS = 1 << 21


def _cells(u: GridFunction, region: Region, min_cells: int = 1, what: str = "region") -> np.ndarray:
    idx = region_cells(u.grid, region)
    if len(idx) < min_cells:
        raise DegenerateRegionError(f"{what} contains {len(idx)} cells, need at least {min_cells}")
    return idx


# ---------------------------------------------------------------------------
# offset-indexed pair sums


@dataclass(frozen=True)
class OffsetTable:
    """Weights w(z) on integer lattice offsets z = i - j, |z_ax| <= extent[ax]."""

    extent: tuple[int, ...]
    table: np.ndarray

    @classmethod
    def build(cls, h: float, extent: tuple[int, ...], weight: Callable[[np.ndarray], np.ndarray],
              reach: float = math.inf, strict: bool = False) -> "OffsetTable":
        axes = [np.arange(-e, e + 1) for e in extent]
        mesh = np.meshgrid(*axes, indexing="ij")
        z = np.stack([m.ravel() for m in mesh], axis=1) * h
        w = np.asarray(weight(z), dtype=float).reshape(-1)
        d2 = np.sum(z * z, axis=1)
        w[d2 == 0] = 0.0
        if math.isfinite(reach):
            out = d2 >= reach * reach if strict else d2 > reach * reach * (1 + 1e-12)
            w[out] = 0.0
        tab = w.reshape(tuple(2 * e + 1 for e in extent))
        tab.setflags(write=False)
        return cls(tuple(extent), tab)

    def flat_index(self, di: np.ndarray) -> np.ndarray:
        """Flat table index of integer offsets di (..., n)."""
        if len(self.extent) == 1:
            return di[..., 0] + self.extent[0]
        return (di[..., 0] + self.extent[0]) * (2 * self.extent[1] + 1) + di[..., 1] + self.extent[1]


def power_weight(n: int, expo: float, scale: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """z -> scale * |z|^-(n + expo), zero at z = 0."""

    def w(z: np.ndarray) -> np.ndarray:
        d2 = np.sum(z * z, axis=1)
        out = np.zeros(len(z))
        nz = d2 > 0
        out[nz] = scale * d2[nz] ** (-(n + expo) / 2.0)
        return out

    return w


def pair_row_sums(
    ia: np.ndarray,
    va: np.ndarray,
    ib: np.ndarray,
    vb: np.ndarray,
    table: OffsetTable,
    integrand: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> np.ndarray:
    """For each row a: sum_b integrand(va_a, vb_b) * w(ia_a - ib_b).

    Offsets outside the table extent must not occur (callers size the table).
    Rows are processed in fixed-size blocks; the result does not depend on the
    thread count.
    """
    m = max(1, len(ib))
    block = max(1, PAIR_BLOCK_ELEMENTS // m)
    starts = list(range(0, len(ia), block))
    flat_tab = table.table.reshape(-1)

    def work(start: int) -> np.ndarray:
        stop = min(start + block, len(ia))
        di = ia[start:stop, None, :] - ib[None, :, :]
        w = flat_tab[table.flat_index(di)]
        return np.sum(integrand(va[start:stop, None], vb[None, :]) * w, axis=1)

    parts = map_ordered(work, starts)
    return np.concatenate(parts) if parts else np.zeros(0)


def abs_power(p: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if p == 2.0:
        def f(a: np.ndarray, b: np.ndarray) -> np.ndarray:
            d = a - b
            return d * d
    else:
        def f(a: np.ndarray, b: np.ndarray) -> np.ndarray:
            return np.abs(a - b) ** p
    return f


# ---------------------------------------------------------------------------
# Gagliardo seminorm


def _zeta_exponents(s: float, p: float) -> list[float]:
    ex = [p, p + 1.0]
    if s * p < 1.0 and p - 1.0 > 0.1:
        ex = [1.0] + ex
    return ex


def offset_sums_1d(v: np.ndarray, p: float) -> np.ndarray:
    """D_k = sum_i |v_{i+k} - v_i|^p for k = 1..N-1 (no measure factor)."""
    n = len(v)
    out = np.empty(n - 1)
    for k in range(1, n):
        d = np.abs(v[k:] - v[:-k])
        out[k - 1] = np.sum(d * d) if p == 2.0 else np.sum(d**p)
    return out


def seminorm_1d(v: np.ndarray, h: float, s: float, p: float, corrected: bool = True) -> float:
    """[u]^p on an interval from contiguous cell values.

    The lattice sum is 2 h^2 sum_k (kh)^(-1-sp) D_k. With ``corrected`` the
    near-diagonal defect of this sum is removed by fitting h*D_k ~ sum_j c_j (kh)^e_j
    on the first offsets and subtracting the zeta-function value of the
    lattice-minus-integral defect of each power.
    """
    n = len(v)
    if n < 2:
        raise DegenerateRegionError("seminorm needs at least 2 cells")
    sp = s * p
    D = offset_sums_1d(np.asarray(v, dtype=float), p) * h
    k = np.arange(1, n)
    total = 2.0 * h * float(np.sum((k * h) ** (-1.0 - sp) * D))
    if not corrected:
        return total
    ex = _zeta_exponents(s, p)
    m = len(ex)
    if n - 1 < m + 1:
        return total
    A = np.array([[(j * h) ** e for e in ex] for j in range(1, m + 1)])
    c = np.linalg.solve(A, D[:m])
    corr = sum(cj * h ** (e - sp) * float(mpmath.zeta(1.0 + sp - e)) for cj, e in zip(c, ex))
    return max(0.0, total - 2.0 * corr)


def seminorm_values(grid: Grid, idx: np.ndarray, vals: np.ndarray, s: float, p: float,
                    quadrature: str = "corrected") -> float:
    """[v]^p over the cells ``idx`` (a region) carrying values ``vals``."""
    if len(idx) < 2:
        raise DegenerateRegionError("seminorm needs at least 2 cells")
    if quadrature not in ("corrected", "lattice"):
        raise ValueError(f"unknown quadrature {quadrature!r}")
    h, n = grid.h, grid.dim
    if n == 1:
        if np.any(np.diff(idx) != 1):
            raise ValueError("1D region cells must be contiguous")
        return seminorm_1d(vals, h, s, p, corrected=(quadrature == "corrected"))
    mi = grid.multi_index(idx)
    extent = tuple(int(e) for e in (mi.max(axis=0) - mi.min(axis=0)))
    table = OffsetTable.build(h, extent, power_weight(n, s * p))
    rows = pair_row_sums(mi, vals, mi, vals, table, abs_power(p))
    return float(np.sum(rows)) * h ** (2 * n)


def gagliardo_seminorm_p(u: GridFunction, region: Region, s: float, p: float,
                         quadrature: str = "corrected") -> float:
    """p-th power of the W^{s,p} seminorm of u over ``region`` (no (1 - s) factor).

    ``quadrature="lattice"`` is the plain midpoint double sum with the diagonal
    removed. ``"corrected"`` (the default) additionally removes the leading
    near-diagonal quadrature defect; it is implemented for n = 1 and falls back
    to the lattice sum for n = 2.
    """
    if not (0 < s < 1 and p > 1):
        raise ValueError("need 0 < s < 1 and p > 1")
    idx = _cells(u, region, 2)
    return seminorm_values(u.grid, idx, u.values[idx], s, p, quadrature)


# ---------------------------------------------------------------------------
# cross interaction


def cross_interaction(u: GridFunction, k: float, sign: str, region: Region, reach: float, s: float, p: float,
                      default_margin: float | None = None) -> float:
    """sum_{x in region} w1(x) sum_{|y - x| < reach} w2(y)^(p-1) / |x - y|^(n+sp) h^(2n).

    For sign '+' w1 = (u - k)_+ and w2 = (u - k)_-; mirrored for '-'. Points y
    outside the grid box come from the exterior extension. An infinite reach is
    truncated at ``default_margin`` beyond the box (the box diameter by default).
    """
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    g = u.grid
    idx = _cells(u, region, 1)
    margin = reach if math.isfinite(reach) else (default_margin if default_margin is not None else g.diameter)
    lat = extended_lattice(g, margin)
    yv = lat.values(u)
    xv = u.values[idx]
    if sign == "+":
        a, b = np.maximum(xv - k, 0.0), np.maximum(k - yv, 0.0)
    else:
        a, b = np.maximum(k - xv, 0.0), np.maximum(yv - k, 0.0)
    rows = a > 0
    cols = b > 0
    if not rows.any() or not cols.any():
        return 0.0
    n = g.dim
    ia = g.multi_index(idx[rows]) + lat.margin
    shape = tuple(sz + 2 * lat.margin for sz in g.shape)
    ib = np.stack(np.unravel_index(np.flatnonzero(cols), shape), axis=-1)
    extent = tuple(int(e) for e in np.maximum(ia.max(axis=0) - ib.min(axis=0), ib.max(axis=0) - ia.min(axis=0)))
    table = OffsetTable.build(g.h, extent, power_weight(n, s * p), reach=reach, strict=True)
    bp = b[cols] ** (p - 1.0)

    def integrand(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.broadcast_to(y, (x.shape[0], y.shape[1]))

    row = pair_row_sums(ia, a[rows], ib, bp, table, integrand)
    return float(np.sum(a[rows] * row)) * g.h ** (2 * n)


# ---------------------------------------------------------------------------
# tails


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _gauss(a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    return 0.5 * (b - a) * _GL_NODES + 0.5 * (a + b), 0.5 * (b - a) * _GL_WEIGHTS


def _rays(grid: Grid, x0: np.ndarray, R: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Directions, angular weights and start distances max(dist to box exit, R)."""
    lo, hi = np.asarray(grid.lo), np.asarray(grid.hi)
    if grid.dim == 1:
        dirs = np.array([[1.0], [-1.0]])
        w = np.array([1.0, 1.0])
    else:
        brk = [0.0, 2 * math.pi]
        for cx in (lo[0], hi[0]):
            for cy in (lo[1], hi[1]):
                brk.append(math.atan2(cy - x0[1], cx - x0[0]) % (2 * math.pi))
        for normal, dist in ((0.0, hi[0] - x0[0]), (math.pi, x0[0] - lo[0]),
                             (math.pi / 2, hi[1] - x0[1]), (1.5 * math.pi, x0[1] - lo[1])):
            if 0 < dist < R:
                da = math.acos(dist / R)
                brk += [(normal + da) % (2 * math.pi), (normal - da) % (2 * math.pi)]
        brk = sorted(set(brk))
        thetas, ws = [], []
        for a, b in zip(brk[:-1], brk[1:]):
            if b - a < 1e-14:
                continue
            pieces = max(1, int(math.ceil((b - a) / (math.pi / 16))))
            edges = np.linspace(a, b, pieces + 1)
            for c, d in zip(edges[:-1], edges[1:]):
                t, wt = _gauss(c, d)
                thetas.append(t)
                ws.append(wt)
        th = np.concatenate(thetas)
        w = np.concatenate(ws)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dirs > 0, (hi - x0) / dirs, np.where(dirs < 0, (lo - x0) / dirs, np.inf))
    t_box = np.min(tx, axis=1)
    return dirs, w, np.maximum(t_box, R)


def _ray_ball_interval(x0: np.ndarray, dirs: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Parameters t_a <= t_b where the ray x0 + t*dir meets |x| < rho (empty if t_a > t_b)."""
    b = dirs @ x0
    c = float(x0 @ x0) - rho * rho
    disc = b * b - c
    sq = np.sqrt(np.maximum(disc, 0.0))
    ta = np.where(disc > 0, -b - sq, np.inf)
    tb = np.where(disc > 0, -b + sq, -np.inf)
    return ta, tb


def exterior_tail_integral(ext: ExteriorExtension, grid: Grid, x0, R: float, s: float, p: float,
                           rtol: float = 1e-8, max_shells: int = 600) -> float:
    """Integral of |ext|^(p-1) |x - x0|^-(n+sp) over points outside the box and outside B_R(x0)."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if ext.kind == "zero" or (ext.kind in ("constant", "power") and ext.c == 0.0):
        return 0.0
    ext.check_tail_membership(s, p)
    lo, hi = np.asarray(grid.lo), np.asarray(grid.hi)
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError("tail centre must lie in the grid box")
    sp = s * p
    dirs, w, t0 = _rays(grid, x0, R)
    q = p - 1.0
    if ext.kind == "constant":
        return float(np.sum(w * abs(ext.c) ** q * t0 ** (-sp) / sp))
    if ext.kind == "power" and float(np.linalg.norm(x0)) < 1e-14:
        gam = sp - ext.beta * q
        return float(np.sum(w * abs(ext.c) ** q * t0 ** (-gam) / gam))
    if ext.kind == "compact" and ext.fn is None:
        ta, tb = _ray_ball_interval(x0, dirs, ext.rho)
        a = np.maximum(ta, t0)
        seg = tb > a
        val = np.zeros(len(dirs))
        val[seg] = (a[seg] ** (-sp) - tb[seg] ** (-sp)) / sp
        return float(np.sum(w * abs(ext.c) ** q * val))
    # numeric: t = t0 * exp(v), shells of unit length in v
    bq = ext.growth_exponent * q
    gam = sp - bq
    total = 0.0
    for j in range(max_shells):
        v, wv = _gauss(float(j), float(j + 1))
        t = t0[:, None] * np.exp(v)[None, :]
        pts = x0[None, None, :] + t[:, :, None] * dirs[:, None, :]
        g = np.abs(ext.evaluate(pts.reshape(-1, grid.dim))).reshape(t.shape) ** q
        total += float(np.sum(w[:, None] * g * t ** (-sp) * wv[None, :]))
        # remainder bound from the declared growth |ext|^q <= M t^bq
        m_shell = float(np.max(g / t**bq))
        t_end = t0 * math.e ** (j + 1)
        remainder = float(np.sum(w * m_shell * t_end ** (-gam) / gam))
        if remainder <= rtol * total or (m_shell == 0.0 and j >= 2):
            break
    return total


def tail_integral(u: GridFunction, x0, R: float, s: float, p: float) -> float:
    """Integral of |u|^(p-1) |x - x0|^-(n+sp) over R^n minus B_R(x0)."""
    if not R > 0:
        raise ValueError("R must be positive")
    g = u.grid
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    d2 = np.sum((g.centers - x0) ** 2, axis=1)
    far = d2 >= R * R
    inner = float(np.sum(np.abs(u.values[far]) ** (p - 1.0) * d2[far] ** (-(g.dim + s * p) / 2.0))) * g.cell_measure
    return inner + exterior_tail_integral(u.exterior, g, x0, R, s, p)


def tail(u: GridFunction, x0, R: float, s: float, p: float) -> float:
    """Tail(u; x0, R) = [(1 - s) R^sp int_{|x - x0| >= R} |u|^(p-1) |x - x0|^-(n+sp)]^(1/(p-1))."""
    val = (1.0 - s) * R ** (s * p) * tail_integral(u, x0, R, s, p)
    return val ** (1.0 / (p - 1.0))


def tail_ns(u: GridFunction, x0, R: float, s: float, p: float) -> float:
    """Non-scaling tail R^(-sp/(p-1)) Tail(u; x0, R)."""
    return R ** (-s * p / (p - 1.0)) * tail(u, x0, R, s, p)


# ---------------------------------------------------------------------------
# level sets, truncations, norms


_CMP = {
    "<": np.less,
    ">": np.greater,
    "<=": np.less_equal,
    ">=": np.greater_equal,
}


def level_set_measure(u: GridFunction, k: float, region: Region, cmp: str) -> float:
    if cmp not in _CMP:
        raise ValueError(f"cmp must be one of {sorted(_CMP)}")
    idx = region_cells(u.grid, region)
    return int(np.count_nonzero(_CMP[cmp](u.values[idx], k))) * u.grid.cell_measure


def truncate(u: GridFunction, k: float, sign: str) -> GridFunction:
    """(u - k)_+ for sign '+', (u - k)_- = (k - u)_+ for sign '-'."""
    if sign == "+":
        return u.map(lambda v: np.maximum(v - k, 0.0), label=f"plus({k!r})")
    if sign == "-":
        return u.map(lambda v: np.maximum(k - v, 0.0), label=f"minus({k!r})")
    raise ValueError("sign must be '+' or '-'")


def negative_part(u: GridFunction) -> GridFunction:
    return truncate(u, 0.0, "-")


def oscillation(u: GridFunction, region: Region) -> float:
    idx = _cells(u, region, 1)
    v = u.values[idx]
    return float(np.max(v) - np.min(v))


def lp_norm_p(u: GridFunction, region: Region, p: float) -> float:
    idx = region_cells(u.grid, region)
    return float(np.sum(np.abs(u.values[idx]) ** p)) * u.grid.cell_measure


def region_measure(g: Grid, region: Region) -> float:
    return len(region_cells(g, region)) * g.cell_measure


def mean_power(u: GridFunction, region: Region, q: float) -> float:
    """(average of |u|^q over region)^(1/q)."""
    idx = _cells(u, region, 1)
    return float(np.mean(np.abs(u.values[idx]) ** q)) ** (1.0 / q)


__all__ = [
    "Ball",
    "OffsetTable",
    "cross_interaction",
    "gagliardo_seminorm_p",
    "level_set_measure",
    "lp_norm_p",
    "mean_power",
    "negative_part",
    "oscillation",
    "region_measure",
    "seminorm_1d",
    "seminorm_values",
    "tail",
    "tail_integral",
    "tail_ns",
    "truncate",
]
