import math

import numpy as np
import pytest

from conftest import OMEGA_1D, allen_cahn, grid_1d, harmonic, nearest_center
from fracdg.dg_verify import DGParams
from fracdg.errors import DegenerateRegionError, HypothesisError
from fracdg.kernels import KernelSpec
from fracdg.lattice import ExteriorExtension, Grid, GridFunction
from fracdg.regularity import harnack_quotient, hoelder_fit, sup_bound_report, weak_harnack_report

S, P = 0.5, 2.0


def _params(**kw):
    return DGParams.for_exponents(S, P, 1, **kw)


def test_sup_bound_at_level_is_zero():
    g = grid_1d(1 / 64)
    rep = sup_bound_report(GridFunction.constant(g, 0.3), [0.0], 0.25, S, P, _params(k0=0.3), 0.5, OMEGA_1D)
    assert rep.implied_constant == 0.0


def test_sup_bound_constant_scale_free():
    g = grid_1d(1 / 64)
    one = GridFunction.constant(g, 1.0)
    c = [sup_bound_report(one, [0.0], R, S, P, _params(k0=0.0), 0.5, OMEGA_1D).implied_constant for R in (0.25, 0.5)]
    assert math.isfinite(c[0]) and c[0] > 0
    assert abs(c[1] / c[0] - 1) < 0.05


def test_sup_bound_theta_when_n_equals_sp():
    g = Grid((-1.5,), (1.5,), 1 / 64)
    rep = sup_bound_report(GridFunction.constant(g, 1.0), [0.0], 0.25, 0.5, 2.0, _params(), 0.5, OMEGA_1D)
    assert rep.extra["theta"] == pytest.approx(0.5)
    assert rep.extra["k0_used"] == 0.0


def test_sup_bound_requires_room():
    g = grid_1d(1 / 64)
    with pytest.raises(ValueError):
        sup_bound_report(GridFunction.constant(g, 1.0), [0.5], 0.3, S, P, _params(), 0.5, OMEGA_1D)
    with pytest.raises(ValueError):
        sup_bound_report(GridFunction.constant(g, 1.0), [0.0], 0.3, S, P, _params(), 1.5, OMEGA_1D)


def test_sup_bound_allen_cahn_stable():
    vals = []
    for h in (1 / 128, 1 / 256):
        u = allen_cahn(h).scaled(1.0, 1.0)
        x0 = nearest_center(u.grid, 0.0)
        vals.append(sup_bound_report(u, x0, 0.25, S, P, _params(k0=0.0), 0.5, OMEGA_1D).implied_constant)
    assert all(math.isfinite(v) and v > 0 for v in vals)
    assert max(vals) / min(vals) < 2


def test_hoelder_sqrt():
    for h in (1 / 1024, 3 / 1023):
        g = Grid((-1.5,), (1.5,), h)
        u = GridFunction.from_function(g, lambda x: np.sqrt(np.abs(x[:, 0])))
        fit = hoelder_fit(u, [0.0], 1.0, levels=4)
        assert abs(fit.alpha - 0.5) <= 0.05


def test_hoelder_linear_and_constant():
    g = Grid((-1.5,), (1.5,), 1 / 1024)
    fit = hoelder_fit(GridFunction.from_function(g, lambda x: 3 * x[:, 0]), [0.0], 1.0)
    assert abs(fit.alpha - 1.0) <= 0.02
    assert fit.clipped == (fit.raw_alpha != fit.alpha)
    flat = hoelder_fit(GridFunction.constant(g, 2.0), [0.0], 1.0)
    assert flat.undefined and math.isnan(flat.alpha)


def test_hoelder_too_coarse():
    g = Grid((-1.5,), (1.5,), 1 / 16)
    with pytest.raises(DegenerateRegionError):
        hoelder_fit(GridFunction.from_function(g, lambda x: x[:, 0]), [0.0], 1.0)
    with pytest.raises(ValueError):
        hoelder_fit(GridFunction.from_function(g, lambda x: x[:, 0]), [0.0], 1.0, levels=3)


@pytest.mark.parametrize("a,b", [(2.0, 0.0), (-0.5, 3.0), (7.0, -1.0)])
def test_hoelder_affine_invariance(a, b):
    u = allen_cahn(1 / 256)
    x0 = nearest_center(u.grid, 0.3)
    base = hoelder_fit(u, x0, 0.6)
    other = hoelder_fit(u.scaled(a, b), x0, 0.6)
    assert other.raw_alpha == pytest.approx(base.raw_alpha, rel=1e-12)
    assert other.residual == pytest.approx(base.residual, rel=1e-9, abs=1e-12)


def test_harnack_constant_and_zero():
    g = grid_1d(1 / 64)
    rep = harnack_quotient(GridFunction.constant(g, 2.0), [0.0], 0.4, S, P, 0.0, omega=OMEGA_1D)
    assert rep.implied_constant == 1.0
    rep = harnack_quotient(GridFunction.constant(g, 0.0), [0.0], 0.4, S, P, 1.0, omega=OMEGA_1D)
    assert rep.implied_constant == 0.0


def test_harnack_negative_u_rejected():
    g = grid_1d(1 / 64)
    u = GridFunction.from_function(g, lambda x: x[:, 0])
    with pytest.raises(HypothesisError):
        harnack_quotient(u, [0.0], 0.4, S, P, 0.0, omega=OMEGA_1D)


def test_harnack_forcing_modes():
    g = grid_1d(1 / 64)
    c = GridFunction.constant(g, 1.0)
    sol = harnack_quotient(c, [0.0], 0.25, S, P, 4.0, mode="solution", omega=OMEGA_1D)
    mini = harnack_quotient(c, [0.0], 0.25, S, P, 4.0, mode="minimizer", omega=OMEGA_1D)
    assert sol.samples[0]["forcing"] == pytest.approx(0.25 ** (S * P / (P - 1)) * 4.0)
    assert mini.samples[0]["forcing"] == pytest.approx(0.25**S * 2.0)


def test_harnack_kernel_note():
    g = grid_1d(1 / 64)
    trunc = KernelSpec(S, P, r0=1.0, r1=2.0, variant="truncated")
    rep = harnack_quotient(GridFunction.constant(g, 1.0), [0.0], 0.4, S, P, 0.0, omega=OMEGA_1D, kernel=trunc)
    assert rep.notes


def test_harnack_homogeneous():
    u = harmonic(1 / 128)
    x0 = nearest_center(u.grid, 0.0)
    q = harnack_quotient(u, x0, 0.4, S, P, 0.0, omega=OMEGA_1D).implied_constant
    for a in (0.1, 3.0):
        qa = harnack_quotient(u.scaled(a), x0, 0.4, S, P, 0.0, omega=OMEGA_1D).implied_constant
        assert qa == pytest.approx(q, rel=1e-12)


def test_harnack_harmonic_stable():
    qs = []
    for h in (1 / 128, 1 / 256):
        u = harmonic(h)
        qs.append(harnack_quotient(u, nearest_center(u.grid, 0.0), 0.4, S, P, 0.0, omega=OMEGA_1D).implied_constant)
    assert all(1.0 <= q < math.inf for q in qs)
    assert max(qs) / min(qs) < 2


def test_weak_harnack_constant():
    g = grid_1d(1 / 64)
    rep = weak_harnack_report(GridFunction.constant(g, 1.5), [0.0], 0.05, S, P, _params(), 0.5)
    assert rep.implied_constant == pytest.approx(1.0, rel=1e-14)


def test_weak_harnack_monotone_in_q_and_below_harnack():
    u = harmonic(1 / 128)
    x0 = nearest_center(u.grid, 0.0)
    cs = [weak_harnack_report(u, x0, 0.4, S, P, _params(), q).implied_constant for q in (0.1, 0.5, 1.0, 2.0)]
    # power means grow with the exponent
    assert all(a <= b * (1 + 1e-14) for a, b in zip(cs, cs[1:]))
    Q = harnack_quotient(u, x0, 0.4, S, P, 0.0, omega=OMEGA_1D).implied_constant
    assert cs[-1] <= Q


def test_weak_harnack_needs_nonnegative():
    g = grid_1d(1 / 64)
    u = GridFunction(g, np.ones(g.n_cells), ExteriorExtension.constant(-1.0))
    with pytest.raises(HypothesisError):
        weak_harnack_report(u, [0.0], 0.2, S, P, _params(), 0.5)
