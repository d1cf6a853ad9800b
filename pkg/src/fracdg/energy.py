"""The discrete energy over C_Omega, the operator L, weak residuals and first variations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, UnsupportedOperationError
from .kernels import KernelSpec
from .lattice import ExtendedLattice, Grid, GridFunction, Region, extended_lattice, region_cells, sphere_area
from .nonlocal_calculus import OffsetTable
from .parallel import map_ordered
from .potentials import PotentialSpec

ROW_BLOCK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class EnergyBreakdown:
    interaction: float
    potential: float
    total: float
    remainder_bound: float = 0.0

    def to_dict(self) -> dict:
        return {"interaction": self.interaction, "potential": self.potential, "total": self.total,
                "remainder_bound": self.remainder_bound}


def _g(d: np.ndarray, p: float) -> np.ndarray:
    """|d|^(p-2) d."""
    if p == 2.0:
        return d
    return np.sign(d) * np.abs(d) ** (p - 1.0)


@dataclass
class InteractionSystem:
    """Pair weights between Omega cells and the extended lattice.

    ``W[a, m] = K(x_a, y_m) h^(2n)`` for Omega cell a and lattice point m with
    0 < |x_a - y_m| <= reach. ``factor[m]`` is 1 for m in Omega and 2 otherwise,
    so that the energy over C_Omega is (1/2p) sum_a sum_m W factor |u_a - u_m|^p.
    """

    grid: Grid
    omega_idx: np.ndarray
    kernel: KernelSpec
    reach: float
    lat: ExtendedLattice
    omega_pos: np.ndarray
    W: np.ndarray
    factor: np.ndarray
    notes: list[str] = field(default_factory=list)

    @property
    def n_omega(self) -> int:
        return len(self.omega_idx)

    def lattice_values(self, u: GridFunction) -> np.ndarray:
        return self.lat.values(u)

    def interaction(self, v: np.ndarray) -> float:
        p = self.kernel.p
        va = v[self.omega_pos]
        n = self.n_omega
        block = max(1, ROW_BLOCK_ELEMENTS // max(1, len(v)))

        def work(start: int) -> np.ndarray:
            stop = min(start + block, n)
            d = np.abs(va[start:stop, None] - v[None, :])
            dp = d * d if p == 2.0 else d**p
            return (dp * self.W[start:stop]) @ self.factor

        rows = np.concatenate(map_ordered(work, range(0, n, block)))
        return float(np.sum(rows)) / (2.0 * p)

    def first_variation(self, v: np.ndarray, dvec: np.ndarray) -> float:
        """Derivative of the interaction along the lattice direction ``dvec``."""
        p = self.kernel.p
        va = v[self.omega_pos]
        da = dvec[self.omega_pos]
        n = self.n_omega
        block = max(1, ROW_BLOCK_ELEMENTS // max(1, len(v)))

        def work(start: int) -> np.ndarray:
            stop = min(start + block, n)
            gd = _g(va[start:stop, None] - v[None, :], p)
            dd = da[start:stop, None] - dvec[None, :]
            return (gd * dd * self.W[start:stop]) @ self.factor

        rows = np.concatenate(map_ordered(work, range(0, n, block)))
        return 0.5 * float(np.sum(rows))


_SYSTEM_CACHE: dict = {}


def interaction_system(grid: Grid, omega: Region, kernel: KernelSpec, reach: float | None = None) -> InteractionSystem:
    reach = grid.diameter if reach is None else float(reach)
    key = (grid, omega, id(kernel), kernel, reach)
    hit = _SYSTEM_CACHE.get(key)
    if hit is not None and hit.kernel is kernel:
        return hit
    notes = []
    idx = region_cells(grid, omega)
    if len(idx) == 0:
        raise ValueError("Omega contains no cells")
    margin = reach if math.isfinite(reach) else grid.diameter
    if not math.isfinite(reach):
        notes.append(f"infinite reach truncated at {margin} beyond the box")
    lat = extended_lattice(grid, margin)
    pos = lat.position_of(idx)
    n = grid.dim
    shape = tuple(sz + 2 * lat.margin for sz in grid.shape)
    ib = np.stack(np.unravel_index(np.arange(len(lat.points)), shape), axis=-1)
    ia = ib[pos]
    extent = tuple(int(sz - 1) for sz in shape)
    table = OffsetTable.build(grid.h, extent, kernel.offset_kernel, reach=reach)
    flat_tab = table.table.reshape(-1)
    W = np.empty((len(idx), len(ib)))
    block = max(1, ROW_BLOCK_ELEMENTS // len(ib))
    for start in range(0, len(idx), block):
        stop = min(start + block, len(idx))
        W[start:stop] = flat_tab[table.flat_index(ia[start:stop, None, :] - ib[None, :, :])]
    W *= grid.h ** (2 * n)
    W.setflags(write=False)
    factor = np.full(len(lat.points), 2.0)
    factor[pos] = 1.0
    system = InteractionSystem(grid, idx, kernel, reach, lat, pos, W, factor, notes)
    if len(_SYSTEM_CACHE) > 8:
        _SYSTEM_CACHE.clear()
    _SYSTEM_CACHE[key] = system
    return system


def _remainder_bound(u: GridFunction, system: InteractionSystem) -> float:
    """Bound for the pairs of C_Omega beyond ``reach`` (bounded extensions only)."""
    k, g = system.kernel, system.grid
    if not math.isfinite(system.reach):
        return 0.0
    if not u.exterior.is_bounded:
        return math.inf
    v = system.lattice_values(u)
    sup = float(np.max(np.abs(v)))
    n = g.dim
    measure = system.n_omega * g.cell_measure
    return measure * (2.0 * sup) ** k.p * k.lam * (1.0 - k.s) * sphere_area(n) * system.reach ** (-k.sp) / (k.sp * k.p)


def energy(u: GridFunction, omega: Region, kernel: KernelSpec, potential: PotentialSpec,
           reach: float | None = None) -> EnergyBreakdown:
    """E(u; Omega) with pairs of C_Omega restricted to |x - y| <= reach (default: box diameter)."""
    if reach is not None and math.isinf(reach) and not u.exterior.is_bounded:
        raise DivergenceError("unbounded exterior growth with infinite reach")
    system = interaction_system(u.grid, omega, kernel, reach)
    v = system.lattice_values(u)
    inter = system.interaction(v)
    pot = float(np.sum(potential.F(u.values[system.omega_idx]))) * u.grid.cell_measure
    return EnergyBreakdown(inter, pot, inter + pot, _remainder_bound(u, system))


def _operator_row(u: GridFunction, kernel: KernelSpec, flat: int, reach: float) -> tuple[np.ndarray, np.ndarray, ExtendedLattice]:
    g = u.grid
    margin = reach if math.isfinite(reach) else g.diameter
    lat = extended_lattice(g, margin)
    pos = int(lat.position_of(np.array([flat]))[0])
    z = lat.points[pos][None, :] - lat.points
    w = kernel.offset_kernel(z)
    d2 = np.sum(z * z, axis=1)
    w[d2 > reach * reach * (1 + 1e-12)] = 0.0
    w[pos] = 0.0
    return w, lat.values(u), lat


def apply_operator(u: GridFunction, kernel: KernelSpec, x, reach: float | None = None) -> float:
    """(L u)(x) = sum_{y != x} |u(x) - u(y)|^(p-2) (u(x) - u(y)) K(x, y) h^n at a cell centre x."""
    g = u.grid
    flat = g.center_index(x)
    reach = g.diameter if reach is None else float(reach)
    w, vals, lat = _operator_row(u, kernel, flat, reach)
    ux = u.values[flat]
    terms = _g(ux - vals, kernel.p) * w
    return float(np.sum(terms)) * g.cell_measure


def _check_test_function(phi: GridFunction, omega: Region | None) -> np.ndarray:
    if phi.exterior.kind != "zero":
        raise ValueError("test functions must have the zero exterior extension")
    supp = np.flatnonzero(phi.values != 0.0)
    if omega is not None and len(supp):
        inside = region_cells(phi.grid, omega)
        if not np.all(np.isin(supp, inside)):
            raise ValueError("test function support must lie inside Omega")
    return supp


def weak_residual(u: GridFunction, phi: GridFunction, kernel: KernelSpec, potential: PotentialSpec,
                  omega: Region | None = None, reach: float | None = None) -> float:
    """(1/2) sum_pairs g(u(x) - u(y)) (phi(x) - phi(y)) K h^(2n) + sum f(u) phi h^n.

    The pair sum over all ordered pairs equals sum_x phi(x) sum_y g(u(x) - u(y)) K h^(2n)
    by antisymmetry, which is how it is evaluated.
    """
    supp = _check_test_function(phi, omega)
    if len(supp) == 0:
        return 0.0
    g = u.grid
    reach = g.diameter if reach is None else float(reach)
    margin = reach if math.isfinite(reach) else g.diameter
    lat = extended_lattice(g, margin)
    vals = lat.values(u)
    pos = lat.position_of(supp)
    shape = tuple(sz + 2 * lat.margin for sz in g.shape)
    ib = np.stack(np.unravel_index(np.arange(len(lat.points)), shape), axis=-1)
    table = OffsetTable.build(g.h, tuple(int(sz - 1) for sz in shape), kernel.offset_kernel, reach=reach)
    flat_tab = table.table.reshape(-1)
    hn = g.cell_measure
    total = 0.0
    rows = []
    for a, pa in zip(supp, pos):
        w = flat_tab[table.flat_index(ib[pa][None, :] - ib)]
        rows.append(phi.values[a] * float(np.sum(_g(vals[pa] - vals, kernel.p) * w)) * hn * hn)
    total = float(np.sum(rows))
    if potential.variant != "zero":
        total += float(np.sum(potential.f(u.values[supp]) * phi.values[supp])) * hn
    return total


def first_variation(u: GridFunction, direction: GridFunction, kernel: KernelSpec, potential: PotentialSpec,
                    omega: Region, reach: float | None = None) -> float:
    """d/dt E(u + t dir; Omega) at t = 0, from the pair sum and f = F_u."""
    if not potential.differentiable:
        raise UnsupportedOperationError(f"potential {potential.variant!r} is not differentiable")
    _check_test_function(direction, omega)
    system = interaction_system(u.grid, omega, kernel, reach)
    v = system.lattice_values(u)
    dvec = np.zeros(len(v))
    dvec[system.omega_pos] = direction.values[system.omega_idx]
    inter = system.first_variation(v, dvec)
    pot = float(np.sum(potential.f(u.values[system.omega_idx]) * direction.values[system.omega_idx]))
    return inter + pot * u.grid.cell_measure


def hat(grid: Grid, flat: int, height: float = 1.0) -> GridFunction:
    """Lattice hat function: ``height`` at one cell, zero elsewhere and outside the box."""
    vals = np.zeros(grid.n_cells)
    vals[flat] = height
    return GridFunction(grid, vals)
