"""Uniform cell-centred lattices on boxes, grid functions and their exterior extensions."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .errors import DivergentTailError

ArrayFn = Callable[[np.ndarray], np.ndarray]


def _as_points(x, dim: int) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, dim) if dim > 1 else pts.reshape(-1, 1)
    if pts.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {pts.shape}")
    return pts


@dataclass(frozen=True)
class Grid:
    """Cell-centred lattice with spacing ``h`` on the box ``prod [lo_i, hi_i]``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    h: float

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "h", float(self.h))
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError("h must be positive and finite")
        for a, b in zip(lo, hi):
            m = (b - a) / self.h
            if not m > 0 or abs(m - round(m)) > 1e-9 * max(1.0, m):
                raise ValueError(f"box side {b - a} is not an integer multiple of h={self.h}")
            if round(m) < 4:
                raise ValueError("at least 4 cells per axis are required")

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float, h: float) -> "Grid":
        return cls((lo,) * dim, (hi,) * dim, h)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @cached_property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(round((b - a) / self.h)) for a, b in zip(self.lo, self.hi))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_measure(self) -> float:
        return self.h ** self.dim

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.lo[axis] + self.h * (np.arange(self.shape[axis]) + 0.5)

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centres in lexicographic (C) order, shape (n_cells, dim)."""
        axes = [self.axis_centers(i) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        pts.setflags(write=False)
        return pts

    def multi_index(self, flat: np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Flat cell index of each point and a mask telling whether it lies in the closed box."""
        pts = _as_points(points, self.dim)
        inside = np.ones(len(pts), dtype=bool)
        idx = []
        for ax in range(self.dim):
            x = pts[:, ax]
            inside &= (x >= self.lo[ax]) & (x <= self.hi[ax])
            i = np.floor((x - self.lo[ax]) / self.h).astype(np.int64)
            idx.append(np.clip(i, 0, self.shape[ax] - 1))
        flat = np.ravel_multi_index(tuple(idx), self.shape)
        return flat, inside

    def center_index(self, x, rtol: float = 1e-9) -> int:
        """Flat index of the cell whose centre is ``x``; raises if ``x`` is not a centre."""
        pts = _as_points(x, self.dim)
        flat, inside = self.locate(pts)
        if not inside[0] or np.max(np.abs(self.centers[flat[0]] - pts[0])) > rtol * max(1.0, self.h):
            raise ValueError(f"point {pts[0].tolist()} is not a cell centre")
        return int(flat[0])

    @property
    def diameter(self) -> float:
        return float(math.sqrt(sum((b - a) ** 2 for a, b in zip(self.lo, self.hi))))

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.lo, self.hi, self.h / factor)

    def with_h(self, h: float) -> "Grid":
        return Grid(self.lo, self.hi, h)


@dataclass(frozen=True)
class Ball:
    """Open Euclidean ball B_R(x0)."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points, self.dim)
        d2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=1)
        return d2 < self.radius**2

    def dist_to_boundary(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        return float(self.radius - np.linalg.norm(x - np.asarray(self.center)))

    def measure(self) -> float:
        return unit_ball_volume(self.dim) * self.radius**self.dim


@dataclass(frozen=True)
class Box:
    """Open box prod (lo_i, hi_i)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lo", tuple(float(v) for v in np.atleast_1d(self.lo)))
        object.__setattr__(self, "hi", tuple(float(v) for v in np.atleast_1d(self.hi)))
        if len(self.lo) != len(self.hi) or any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("box bounds must satisfy lo < hi on each axis")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points, self.dim)
        return np.all((pts > np.asarray(self.lo)) & (pts < np.asarray(self.hi)), axis=1)

    def dist_to_boundary(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(-1)
        return float(min(np.min(x - np.asarray(self.lo)), np.min(np.asarray(self.hi) - x)))

    def measure(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))


Region = Union[Ball, Box]


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n (2 for n = 1)."""
    return n * unit_ball_volume(n)


def region_cells(g: Grid, region: Region) -> np.ndarray:
    """Flat indices (increasing, hence lexicographic) of cells with centre strictly inside."""
    if region.dim != g.dim:
        raise ValueError("region and grid dimensions differ")
    return np.flatnonzero(region.contains(g.centers))


def ball_cells(g: Grid, b: Ball) -> np.ndarray:
    return region_cells(g, b)


def cell_measure(g: Grid) -> float:
    return g.cell_measure


# ---------------------------------------------------------------------------
# exterior extensions


_KINDS = ("zero", "constant", "power", "compact", "custom")


@dataclass(frozen=True)
class ExteriorExtension:
    """Rule giving u(x) for x outside the grid box.

    ``power`` means c*|x|**beta. ``compact`` is ``value`` (a constant or a callable)
    on |x| < rho and 0 beyond. ``custom`` wraps an arbitrary vectorised callable;
    ``beta`` then declares its growth exponent so the tail check can be applied.
    """

    kind: str = "zero"
    c: float = 0.0
    beta: float = 0.0
    rho: float = math.inf
    fn: ArrayFn | None = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown extension kind {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom extension needs fn")
        if self.kind == "compact" and not self.rho > 0:
            raise ValueError("compact extension needs rho > 0")
        if self.kind == "power" and self.beta < 0:
            raise ValueError("power extension needs beta >= 0")

    # constructors -------------------------------------------------------
    @classmethod
    def zero(cls) -> "ExteriorExtension":
        return cls("zero")

    @classmethod
    def constant(cls, c: float) -> "ExteriorExtension":
        return cls("constant", c=float(c))

    @classmethod
    def power(cls, beta: float, c: float) -> "ExteriorExtension":
        return cls("power", c=float(c), beta=float(beta))

    @classmethod
    def compact(cls, rho: float, value: float | ArrayFn) -> "ExteriorExtension":
        if callable(value):
            return cls("compact", rho=float(rho), fn=value, label=getattr(value, "__name__", "fn"))
        return cls("compact", rho=float(rho), c=float(value))

    @classmethod
    def custom(cls, fn: ArrayFn, beta: float = 0.0, label: str = "") -> "ExteriorExtension":
        return cls("custom", fn=fn, beta=float(beta), label=label or getattr(fn, "__name__", "fn"))

    # evaluation ---------------------------------------------------------
    def evaluate(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        m = len(pts)
        if self.kind == "zero":
            return np.zeros(m)
        if self.kind == "constant":
            return np.full(m, self.c)
        r = np.sqrt(np.sum(pts**2, axis=1))
        if self.kind == "power":
            return self.c * r**self.beta
        if self.kind == "compact":
            inside = r < self.rho
            out = np.zeros(m)
            if self.fn is None:
                out[inside] = self.c
            elif inside.any():
                out[inside] = np.asarray(self.fn(pts[inside]), dtype=float).reshape(-1)
            return out
        return np.asarray(self.fn(pts), dtype=float).reshape(m)

    @property
    def is_bounded(self) -> bool:
        return self.growth_exponent == 0.0

    @property
    def growth_exponent(self) -> float:
        if self.kind in ("power", "custom"):
            return self.beta
        return 0.0

    def check_tail_membership(self, s: float, p: float) -> None:
        """Raise unless |u|^(p-1)/|x|^(n+sp) is integrable at infinity."""
        if self.kind == "power" and self.c == 0.0:
            return
        if self.growth_exponent * (p - 1) >= s * p:
            raise DivergentTailError(
                f"extension growth beta={self.growth_exponent} needs beta < sp/(p-1) = {s * p / (p - 1)}"
            )

    def mapped(self, g: Callable[[np.ndarray], np.ndarray], label: str) -> "ExteriorExtension":
        """Extension of ``g(u)``; symbolic for zero and constant, a wrapper otherwise."""
        if self.kind in ("zero", "constant"):
            val = float(np.asarray(g(np.array([self.c if self.kind == "constant" else 0.0])))[0])
            return ExteriorExtension.zero() if val == 0.0 else ExteriorExtension.constant(val)
        base = self

        def wrapped(pts: np.ndarray) -> np.ndarray:
            return g(base.evaluate(pts))

        return ExteriorExtension.custom(wrapped, beta=self.growth_exponent, label=f"{label}[{self.spec()}]")

    def spec(self) -> str:
        if self.kind == "zero":
            return "zero"
        if self.kind == "constant":
            return f"constant({self.c!r})"
        if self.kind == "power":
            return f"power({self.beta!r},{self.c!r})"
        if self.kind == "compact":
            val = repr(self.c) if self.fn is None else self.label
            return f"compact({self.rho!r},{val})"
        return f"custom({self.label},{self.beta!r})"

    @classmethod
    def from_spec(cls, text: str) -> "ExteriorExtension":
        text = text.strip()
        if text == "zero":
            return cls.zero()
        m = re.fullmatch(r"(\w+)\((.*)\)", text)
        if not m:
            raise ValueError(f"cannot parse extension spec {text!r}")
        kind, args = m.group(1), [a.strip() for a in m.group(2).split(",")]
        if kind == "constant" and len(args) == 1:
            return cls.constant(float(args[0]))
        if kind == "power" and len(args) == 2:
            return cls.power(float(args[0]), float(args[1]))
        if kind == "compact" and len(args) == 2:
            return cls.compact(float(args[0]), float(args[1]))
        raise ValueError(f"extension spec {text!r} is not serialisable as data")


# ---------------------------------------------------------------------------
# grid functions


@dataclass(frozen=True)
class GridFunction:
    """Cell values on a grid plus an exterior rule; immutable."""

    grid: Grid
    values: np.ndarray
    exterior: ExteriorExtension = field(default_factory=ExteriorExtension.zero)

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != self.grid.n_cells:
            raise ValueError(f"expected {self.grid.n_cells} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(
        cls, grid: Grid, fn: ArrayFn, exterior: ExteriorExtension | None = None, beta: float = 0.0
    ) -> "GridFunction":
        """Sample ``fn`` at cell centres; by default the same ``fn`` extends u beyond the box."""
        vals = np.asarray(fn(grid.centers), dtype=float).reshape(-1)
        if exterior is None:
            exterior = ExteriorExtension.custom(fn, beta=beta)
        return cls(grid, vals, exterior)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "GridFunction":
        ext = ExteriorExtension.zero() if c == 0 else ExteriorExtension.constant(c)
        return cls(grid, np.full(grid.n_cells, float(c)), ext)

    def evaluate(self, points) -> np.ndarray:
        pts = _as_points(points, self.grid.dim)
        flat, inside = self.grid.locate(pts)
        out = np.empty(len(pts))
        out[inside] = self.values[flat[inside]]
        if (~inside).any():
            out[~inside] = self.exterior.evaluate(pts[~inside])
        return out

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.grid, values, self.exterior)

    def map(self, g: Callable[[np.ndarray], np.ndarray], label: str = "map") -> "GridFunction":
        return GridFunction(self.grid, g(self.values), self.exterior.mapped(g, label))

    def __add__(self, other: "GridFunction") -> "GridFunction":
        if other.grid != self.grid:
            raise ValueError("grids differ")
        a, b = self.exterior, other.exterior

        def summed(pts: np.ndarray) -> np.ndarray:
            return a.evaluate(pts) + b.evaluate(pts)

        if a.kind == "zero":
            ext = b
        elif b.kind == "zero":
            ext = a
        else:
            ext = ExteriorExtension.custom(summed, beta=max(a.growth_exponent, b.growth_exponent), label="sum")
        return GridFunction(self.grid, self.values + other.values, ext)

    def scaled(self, a: float, b: float = 0.0) -> "GridFunction":
        """The function a*u + b."""
        return self.map(lambda v: a * v + b, label=f"affine({a!r},{b!r})")

    # serialisation ------------------------------------------------------
    def to_csv(self, path: str | Path) -> None:
        g = self.grid
        header = "# " + ",".join(
            [str(g.dim), repr(g.h), *map(repr, g.lo), *map(repr, g.hi), f"exterior={self.exterior.spec()}"]
        )
        idx = g.multi_index(np.arange(g.n_cells))
        with open(path, "w", newline="") as fh:
            fh.write(header + "\n")
            w = csv.writer(fh, lineterminator="\n")
            for k in range(g.n_cells):
                w.writerow([*idx[k].tolist(), *map(repr, g.centers[k].tolist()), repr(float(self.values[k]))])

    @classmethod
    def from_csv(cls, path: str | Path, exterior: ExteriorExtension | None = None) -> "GridFunction":
        with open(path) as fh:
            header = fh.readline()
            rows = list(csv.reader(fh))
        if not header.startswith("# "):
            raise ValueError("missing CSV header")
        head, ext_text = header[2:].strip().split(",exterior=", 1)
        parts = head.split(",")
        dim = int(parts[0])
        h = float(parts[1])
        lo = tuple(float(v) for v in parts[2 : 2 + dim])
        hi = tuple(float(v) for v in parts[2 + dim : 2 + 2 * dim])
        grid = Grid(lo, hi, h)
        vals = np.empty(grid.n_cells)
        for row in rows:
            idx = tuple(int(v) for v in row[:dim])
            vals[np.ravel_multi_index(idx, grid.shape)] = float(row[-1])
        if exterior is None:
            exterior = ExteriorExtension.from_spec(ext_text)
        return cls(grid, vals, exterior)


def grid_function(grid: Grid, fn: ArrayFn, beta: float = 0.0) -> GridFunction:
    return GridFunction.from_function(grid, fn, beta=beta)


# ---------------------------------------------------------------------------
# extended lattices (grid box plus synthesized exterior shells)


@dataclass(frozen=True)
class ExtendedLattice:
    """The grid lattice continued by ``margin`` cells on every side.

    ``grid_index[m]`` is the flat grid index of point m, or -1 for synthesized
    exterior points whose values come from the extension rule.
    """

    grid: Grid
    margin: int
    points: np.ndarray
    grid_index: np.ndarray

    def values(self, u: GridFunction) -> np.ndarray:
        out = np.empty(len(self.points))
        inside = self.grid_index >= 0
        out[inside] = u.values[self.grid_index[inside]]
        if (~inside).any():
            out[~inside] = u.exterior.evaluate(self.points[~inside])
        return out

    def position_of(self, flat: np.ndarray) -> np.ndarray:
        """Position in ``points`` of grid cells given by flat grid index."""
        mi = self.grid.multi_index(flat) + self.margin
        shape = tuple(s + 2 * self.margin for s in self.grid.shape)
        return np.ravel_multi_index(tuple(mi.T), shape)


def extended_lattice(g: Grid, margin_length: float) -> ExtendedLattice:
    m = int(math.ceil(margin_length / g.h - 1e-9)) if margin_length > 0 else 0
    axes = [g.lo[ax] + g.h * (np.arange(-m, g.shape[ax] + m) + 0.5) for ax in range(g.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([a.ravel() for a in mesh], axis=1)
    ids = [np.arange(-m, g.shape[ax] + m) for ax in range(g.dim)]
    imesh = np.meshgrid(*ids, indexing="ij")
    inside = np.ones(pts.shape[0], dtype=bool)
    for ax in range(g.dim):
        i = imesh[ax].ravel()
        inside &= (i >= 0) & (i < g.shape[ax])
    gi = np.full(pts.shape[0], -1, dtype=np.int64)
    if inside.any():
        gi[inside] = np.ravel_multi_index(tuple(imesh[ax].ravel()[inside] for ax in range(g.dim)), g.shape)
    pts.setflags(write=False)
    gi.setflags(write=False)
    return ExtendedLattice(g, m, pts, gi)

