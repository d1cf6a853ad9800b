"""Potentials F(x, u) and right-hand sides f = F_u, including jump potentials."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import UnsupportedOperationError
from .reports import AuditReport

VARIANTS = ("zero", "double_well", "chi_positive", "chi_interval", "two_phase", "smooth_table")


@dataclass(frozen=True)
class Growth:
    """Declared bound |F(x, u)| <= d1 + d2 |u|^q."""

    d1: float = 1.0
    d2: float = 0.0
    q: float = 1.0

    def __post_init__(self) -> None:
        if self.d1 < 0 or self.d2 < 0 or self.q < 1:
            raise ValueError("growth needs d1, d2 >= 0 and q >= 1")


@dataclass(frozen=True)
class PotentialSpec:
    """A potential; x-independent for every built-in variant.

    ``smooth_table`` interpolates samples ``table`` = ((u, value), ...) with a monotone
    cubic. When ``table_is_f`` is set the samples are f itself and F is its
    antiderivative vanishing at the first sample.
    """

    variant: str = "zero"
    d: float = 2.0
    lambda1: float = 1.0
    lambda2: float = 2.0
    table: tuple = ()
    table_is_f: bool = False
    growth: Growth = field(default_factory=Growth)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown potential variant {self.variant!r}")
        if self.variant == "double_well" and not self.d > 0:
            raise ValueError("double_well needs d > 0")
        if self.variant == "two_phase" and self.lambda1 == self.lambda2:
            raise ValueError("two_phase needs lambda1 != lambda2")
        if self.variant == "smooth_table":
            tab = tuple((float(u), float(v)) for u, v in self.table)
            if len(tab) < 2 or any(b[0] <= a[0] for a, b in zip(tab, tab[1:])):
                raise ValueError("smooth_table needs at least 2 samples with increasing u")
            object.__setattr__(self, "table", tab)

    @property
    def differentiable(self) -> bool:
        if self.variant in ("zero", "smooth_table"):
            return True
        return self.variant == "double_well" and self.d > 1

    @cached_property
    def _interp(self) -> tuple[Callable, Callable]:
        u = np.array([t[0] for t in self.table])
        v = np.array([t[1] for t in self.table])
        if self.table_is_f:
            f = PchipInterpolator(u, v, extrapolate=True)
            return f.antiderivative(), f
        F = PchipInterpolator(u, v, extrapolate=True)
        return F, F.derivative()

    def F(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        v = self.variant
        if v == "zero":
            return np.zeros_like(u)
        if v == "double_well":
            return np.abs(1.0 - u * u) ** self.d
        if v == "chi_positive":
            return (u > 0).astype(float)
        if v == "chi_interval":
            return ((u > -1) & (u < 1)).astype(float)
        if v == "two_phase":
            return self.lambda1 * (u < 0) + self.lambda2 * (u > 0)
        return np.asarray(self._interp[0](u), dtype=float)

    def f(self, u) -> np.ndarray:
        if not self.differentiable:
            raise UnsupportedOperationError(
                f"potential {self.variant!r} is not differentiable in u; use the minimization path"
            )
        u = np.asarray(u, dtype=float)
        if self.variant == "zero":
            return np.zeros_like(u)
        if self.variant == "double_well":
            w = 1.0 - u * u
            return -2.0 * self.d * u * np.abs(w) ** (self.d - 1.0) * np.sign(w)
        return np.asarray(self._interp[1](u), dtype=float)

    def compiled(self) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(code, params, F breakpoints, F coefficients, f breakpoints, f coefficients) for compiled loops."""
        from . import _kernels as ck

        codes = {
            "zero": ck.POT_ZERO,
            "double_well": ck.POT_DOUBLE_WELL,
            "chi_positive": ck.POT_CHI_POSITIVE,
            "chi_interval": ck.POT_CHI_INTERVAL,
            "two_phase": ck.POT_TWO_PHASE,
            "smooth_table": ck.POT_TABLE,
        }
        prm = np.array([self.d, self.lambda1, self.lambda2])
        empty_x, empty_c = np.zeros(2), np.zeros((1, 1))
        if self.variant != "smooth_table":
            return codes[self.variant], prm, empty_x, empty_c, empty_x, empty_c
        F, f = self._interp
        return (codes["smooth_table"], prm, np.asarray(F.x, dtype=float), np.ascontiguousarray(F.c, dtype=float),
                np.asarray(f.x, dtype=float), np.ascontiguousarray(f.c, dtype=float))

    def sup_abs_F(self, lo: float, hi: float, samples: int = 2001) -> float:
        u = np.concatenate([np.linspace(lo, hi, samples), [x for x in (-1.0, 0.0, 1.0) if lo <= x <= hi]])
        vals = np.abs(self.F(u))
        if self.variant in ("chi_positive", "chi_interval", "two_phase"):
            # one-sided limits at the jumps count for the sup
            eps = 1e-12
            vals = np.concatenate([vals, np.abs(self.F(np.clip(u + eps, lo, hi))), np.abs(self.F(np.clip(u - eps, lo, hi)))])
        return float(np.max(vals))

    def sup_abs_f(self, lo: float, hi: float, samples: int = 2001) -> float:
        u = np.linspace(lo, hi, samples)
        return float(np.max(np.abs(self.f(u))))


def eval_potential(ps: PotentialSpec, x, u) -> np.ndarray | float:
    out = ps.F(u)
    return float(out) if np.ndim(out) == 0 else out


def eval_f(ps: PotentialSpec, x, u) -> np.ndarray | float:
    out = ps.f(u)
    return float(out) if np.ndim(out) == 0 else out


def check_growth(ps: PotentialSpec, u_range: tuple[float, float], samples: int = 1001,
                 derivative: bool = False) -> AuditReport:
    """Check |F| <= d1 + d2|u|^q (or |f| <= d1 + d2|u|^(q-1) when ``derivative``) on a range."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    lo, hi = float(u_range[0]), float(u_range[1])
    u = np.unique(np.concatenate([np.linspace(lo, hi, max(samples, 2)), [x for x in (-1.0, 0.0, 1.0) if lo <= x <= hi]]))
    g = ps.growth
    if derivative:
        val = np.abs(ps.f(u))
        bound = g.d1 + g.d2 * np.abs(u) ** (g.q - 1.0)
        name = "fbounds"
    else:
        val = np.abs(ps.F(u))
        if ps.variant in ("chi_positive", "chi_interval", "two_phase"):
            val = np.maximum(val, np.maximum(np.abs(ps.F(u + 1e-12)), np.abs(ps.F(u - 1e-12))))
        bound = g.d1 + g.d2 * np.abs(u) ** g.q
        name = "Fbounds"
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, val / np.where(bound > 0, bound, 1.0), np.where(val > 0, np.inf, 0.0))
    i = int(np.argmax(ratio))
    rep = AuditReport(name)
    rep.worst_ratio = float(ratio[i])
    rep.passed = bool(np.all(val <= bound * (1 + 1e-12)))
    rep.implied_constant = float(np.max(val))
    rep.samples.append({"u": float(u[i]), "lhs": float(val[i]), "rhs": float(bound[i]), "ratio": float(ratio[i])})
    rep.extra = {"u_range": [lo, hi], "samples": int(len(u)), "d1": g.d1, "d2": g.d2, "q": g.q}
    return rep
