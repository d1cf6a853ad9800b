"""Kernels K(x, y) = (1 - s) a(x, y) / |x - y|^(n + sp) and their validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import SingularityError
from .reports import AuditReport

VARIANTS = ("standard", "angular", "convolution", "truncated", "custom")


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of a translation-invariant kernel.

    ``a0`` is a vectorised callable: on unit vectors (m, n) for ``angular`` and on
    offsets z = x - y for ``convolution`` and ``custom``. A ``custom`` kernel may
    instead (or additionally) carry ``table``, a tuple of (offset, value) entries
    matched exactly; offsets not in the table get ``a0(z)`` or ``default``.
    """

    s: float
    p: float
    lam: float = 1.0
    r0: float = math.inf
    variant: str = "standard"
    r1: float | None = None
    a0: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    table: tuple = ()
    default: float = 1.0
    label: str = ""

    def __post_init__(self) -> None:
        if not 0 < self.s < 1:
            raise ValueError("s must lie in (0, 1)")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.lam >= 1:
            raise ValueError("Lambda must be at least 1")
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "truncated":
            if self.r1 is None or not self.r1 >= self.r0:
                raise ValueError("truncated kernel needs r1 >= r0")
        if self.variant in ("angular", "convolution") and self.a0 is None:
            raise ValueError(f"{self.variant} kernel needs a0")
        if self.variant == "custom" and self.a0 is None and not self.table:
            raise ValueError("custom kernel needs a0 or a table")
        table = tuple((tuple(float(v) for v in np.atleast_1d(z)), float(a)) for z, a in self.table)
        object.__setattr__(self, "table", table)

    @property
    def sp(self) -> float:
        return self.s * self.p

    @property
    def globally_elliptic_by_construction(self) -> bool:
        return self.variant != "truncated" and math.isinf(self.r0)

    def amplitude(self, z: np.ndarray) -> np.ndarray:
        """a(z) for offsets z = x - y of shape (m, n)."""
        z = np.asarray(z, dtype=float)
        m = z.shape[0]
        if self.variant == "standard":
            return np.ones(m)
        r = np.sqrt(np.sum(z * z, axis=1))
        if self.variant == "truncated":
            return (r < self.r1).astype(float)
        if self.variant == "angular":
            with np.errstate(invalid="ignore", divide="ignore"):
                omega = z / r[:, None]
            return np.asarray(self.a0(omega), dtype=float).reshape(m)
        if self.variant == "convolution":
            return np.asarray(self.a0(z), dtype=float).reshape(m)
        out = np.asarray(self.a0(z), dtype=float).reshape(m) if self.a0 is not None else np.full(m, self.default)
        for off, val in self.table:
            hit = np.all(np.abs(z - np.asarray(off)) <= 1e-9 * max(1.0, float(np.max(np.abs(off)))), axis=1)
            out[hit] = val
        return out

    def offset_kernel(self, z: np.ndarray) -> np.ndarray:
        """K evaluated on offsets z (m, n); zero offsets get 0 (callers exclude them)."""
        z = np.asarray(z, dtype=float)
        n = z.shape[1]
        d2 = np.sum(z * z, axis=1)
        out = np.zeros(len(z))
        nz = d2 > 0
        out[nz] = (1.0 - self.s) * self.amplitude(z[nz]) * d2[nz] ** (-(n + self.sp) / 2.0)
        return out

    def radial_kernel(self, d2: np.ndarray, n: int) -> np.ndarray:
        """(1 - s) |z|^-(n+sp) from squared distances, the standard-kernel factor."""
        with np.errstate(divide="ignore"):
            return (1.0 - self.s) * np.power(d2, -(n + self.sp) / 2.0)

    def pair_kernel(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """K for all pairs (x_i, y_j); shape (len(x), len(y)); coincident pairs give 0."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = x.shape[1]
        diff = x[:, None, :] - y[None, :, :]
        d2 = np.sum(diff * diff, axis=2)
        base = np.zeros_like(d2)
        nz = d2 > 0
        base[nz] = (1.0 - self.s) * d2[nz] ** (-(n + self.sp) / 2.0)
        if self.variant == "standard":
            return base
        amp = self.amplitude(diff.reshape(-1, n)).reshape(d2.shape)
        amp[d2 == 0] = 0.0
        return base * amp


def eval_kernel(k: KernelSpec, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = (x - y).reshape(1, -1)
    d = float(np.sqrt(np.sum(z * z)))
    if d == 0.0:
        raise SingularityError("kernel evaluated at coincident points")
    n = z.shape[1]
    if k.variant == "standard":
        return (1.0 - k.s) / d ** (n + k.sp)
    return float((1.0 - k.s) * k.amplitude(z)[0] / d ** (n + k.sp))


def _sample_pairs(k: KernelSpec, samples: int, rng: np.random.Generator, dim: int, box: float = 2.0):
    x = rng.uniform(-box, box, size=(samples, dim))
    y = rng.uniform(-box, box, size=(samples, dim))
    extra = [z for z, _ in k.table if len(z) == dim]
    if extra:
        xs = rng.uniform(-box, box, size=(len(extra), dim))
        x = np.vstack([x, xs])
        y = np.vstack([y, xs - np.asarray(extra)])
    return x, y


def check_symmetry(k: KernelSpec, samples: int = 1000, seed: int = 0, dim: int = 1) -> AuditReport:
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    x, y = _sample_pairs(k, samples, rng, dim)
    keep = np.any(x != y, axis=1)
    x, y = x[keep], y[keep]
    kxy = np.array([eval_kernel(k, a, b) for a, b in zip(x, y)])
    kyx = np.array([eval_kernel(k, b, a) for a, b in zip(x, y)])
    dev = np.abs(kxy - kyx)
    worst = int(np.argmax(dev))
    rep = AuditReport("Ksimm", seed=seed)
    rep.worst_ratio = float(dev[worst])
    rep.implied_constant = float(dev[worst])
    rep.passed = bool(dev[worst] == 0.0)
    rep.samples.append({"x": x[worst].tolist(), "y": y[worst].tolist(), "K_xy": kxy[worst], "K_yx": kyx[worst],
                        "deviation": float(dev[worst])})
    rep.extra = {"samples": int(len(x)), "dim": dim, "variant": k.variant}
    return rep


def check_ellipticity(
    k: KernelSpec, samples: int = 1000, global_: bool = False, seed: int = 0, dim: int = 1
) -> AuditReport:
    """Compare a(z) with the bounds chi_{B_r0}/Lambda <= a <= Lambda (chi dropped when ``global_``).

    Ratios are reported as a*Lambda against the lower bound (must be >= 1 where the
    bound is active) and a/Lambda against the upper one (must be <= 1).
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    scale = max(v for v in (k.r0, k.r1 or 0.0, 1.0) if math.isfinite(v))
    radii = list(np.exp(rng.uniform(math.log(1e-3), math.log(4.0 * scale), size=samples)))
    probes = [0.5, 1.0, 1.5, 2.0, 3.0]
    for r in (k.r0, k.r1):
        if r is not None and math.isfinite(r):
            probes += [0.5 * r, 0.99 * r, 1.5 * r, 3.0 * r]
    radii = np.array(radii + probes)
    dirs = rng.normal(size=(len(radii), dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    z = dirs * radii[:, None]
    if k.table:
        z = np.vstack([z, np.asarray([t for t, _ in k.table if len(t) == dim]).reshape(-1, dim)])
    a = k.amplitude(z)
    r = np.linalg.norm(z, axis=1)
    active = np.ones(len(z), dtype=bool) if global_ else r < k.r0
    lower = a[active] * k.lam
    upper = a / k.lam
    worst_lower = float(np.min(lower)) if lower.size else math.inf
    worst_upper = float(np.max(upper))
    rep = AuditReport("ellipticity_global" if global_ else "ellipticity_local", seed=seed)
    rep.passed = bool(worst_lower >= 1.0 - 1e-12 and worst_upper <= 1.0 + 1e-12)
    rep.worst_ratio = max(worst_upper, 1.0 / worst_lower if worst_lower > 0 else math.inf)
    rep.implied_constant = rep.worst_ratio * k.lam
    rep.extra = {"worst_lower_ratio": worst_lower, "worst_upper_ratio": worst_upper,
                 "samples": int(len(z)), "dim": dim, "variant": k.variant}
    if lower.size:
        i = int(np.flatnonzero(active)[np.argmin(lower)])
        rep.samples.append({"bound": "lower", "z": z[i].tolist(), "a": float(a[i]), "ratio": worst_lower})
    j = int(np.argmax(upper))
    rep.samples.append({"bound": "upper", "z": z[j].tolist(), "a": float(a[j]), "ratio": worst_upper})
    return rep


# ---------------------------------------------------------------------------
# parametric amplitude families used by the config parser


def angular_family(name: str, amp: float) -> Callable[[np.ndarray], np.ndarray]:
    """Even amplitudes on the unit sphere."""
    if name == "cos2":
        # 1 + amp*cos(2 theta) in 2D; in 1D the sphere is {-1, 1} and this is 1 + amp
        def a0(w: np.ndarray) -> np.ndarray:
            return 1.0 + amp * (2.0 * w[:, 0] ** 2 - 1.0)
    elif name == "const":
        def a0(w: np.ndarray) -> np.ndarray:
            return np.full(len(w), 1.0 + amp)
    else:
        raise ValueError(f"unknown angular family {name!r}")
    a0.__name__ = f"{name}({amp})"
    return a0


def convolution_family(name: str, amp: float) -> Callable[[np.ndarray], np.ndarray]:
    if name == "gauss":
        def a0(z: np.ndarray) -> np.ndarray:
            return 1.0 + amp * np.exp(-np.sum(z * z, axis=1))
    else:
        raise ValueError(f"unknown convolution family {name!r}")
    a0.__name__ = f"{name}({amp})"
    return a0
