import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracdg.dg_verify import estimate_embedding_constants
from fracdg.errors import DegenerateRegionError, DivergentTailError
from fracdg.lattice import Ball, Box, ExteriorExtension, Grid, GridFunction
from fracdg.nonlocal_calculus import (
    cross_interaction,
    gagliardo_seminorm_p,
    level_set_measure,
    oscillation,
    tail,
    tail_ns,
    truncate,
)

OMEGA = Box((-1.0,), (1.0,))
# 2 int_0^1 int_0^1 (a + b)^(-3/2) da db, the indicator of [0, inf) on (-1, 1) at s = 1/4, p = 2
INDICATOR_EXACT = 16.0 - 8.0 * math.sqrt(2.0)


def bbm_exact(s: float) -> float:
    return 2.0 ** (4 - 2 * s) * (1 - s) * (1 / (2 - 2 * s) - 1 / (3 - 2 * s))


def test_oracles_frozen():
    assert INDICATOR_EXACT == pytest.approx(4.6863, abs=5e-5)
    assert bbm_exact(0.95) == pytest.approx(1.9487, abs=5e-5)


def _indicator(h):
    g = Grid((-1.0,), (1.0,), h)
    return GridFunction.from_function(g, lambda x: (x[:, 0] >= 0).astype(float))


def test_constant_seminorm_zero():
    g = Grid.cube(2, -1.0, 1.0, 0.125)
    u = GridFunction.constant(g, 3.0)
    assert gagliardo_seminorm_p(u, Ball((0.0, 0.0), 0.9), 0.5, 2.0) == 0.0


def test_indicator_seminorm():
    val = gagliardo_seminorm_p(_indicator(1 / 512), OMEGA, 0.25, 2.0)
    assert abs(val - INDICATOR_EXACT) / INDICATOR_EXACT < 0.02


def test_linear_seminorm_bbm():
    g = Grid((-1.0,), (1.0,), 1 / 512)
    u = GridFunction.from_function(g, lambda x: x[:, 0])
    val = 0.05 * gagliardo_seminorm_p(u, OMEGA, 0.95, 2.0)
    assert abs(val - bbm_exact(0.95)) / bbm_exact(0.95) < 0.02


def test_lattice_quadrature_underestimates_smooth():
    g = Grid((-1.0,), (1.0,), 1 / 128)
    u = GridFunction.from_function(g, lambda x: x[:, 0])
    lat = 0.5 * gagliardo_seminorm_p(u, OMEGA, 0.5, 2.0, quadrature="lattice")
    assert lat < bbm_exact(0.5)


def test_degenerate_region():
    g = Grid((-1.0,), (1.0,), 0.25)
    u = GridFunction.constant(g, 1.0)
    with pytest.raises(DegenerateRegionError):
        gagliardo_seminorm_p(u, Ball((0.125,), 0.1), 0.5, 2.0)


def _brute_cross(h, reach, s, p):
    """Direct double sum for u = sign(x), k = 0, sign '+', region (-1, 1)."""
    total = 0.0
    xs = -1.0 + h / 2 + h * np.arange(int(round(2 / h)))
    for x in xs[xs > 0]:
        j = np.arange(1, int(math.ceil(reach / h)) + 2)
        y = x - j * h
        d = x - y
        keep = (y < 0) & (d < reach)
        total += float(np.sum(d[keep] ** (-1 - s * p)))
    return total * h * h


def test_cross_interaction_sign_regression():
    h = 1 / 256
    g = Grid((-1.5,), (1.5,), h)
    u = GridFunction.from_function(g, lambda x: np.sign(x[:, 0]))
    val = cross_interaction(u, 0.0, "+", OMEGA, 2.0, 0.25, 2.0)
    oracle = _brute_cross(h, 2.0, 0.25, 2.0)
    assert val == pytest.approx(oracle, rel=1e-12)
    assert val == pytest.approx(2.493825, rel=1e-6)


def test_cross_interaction_vanishes():
    g = Grid((-1.5,), (1.5,), 1 / 64)
    u = GridFunction.from_function(g, lambda x: 2.0 + x[:, 0] ** 2)
    assert cross_interaction(u, 1.0, "+", OMEGA, 2.0, 0.5, 2.0) == 0.0
    c = GridFunction.constant(g, 0.3)
    assert cross_interaction(c, 0.3, "+", OMEGA, 2.0, 0.5, 2.0) == 0.0
    assert cross_interaction(c, 0.3, "-", OMEGA, 2.0, 0.5, 2.0) == 0.0


def test_cross_zero_when_no_sublevel_in_reach():
    g = Grid((-1.5,), (1.5,), 1 / 64)
    u = GridFunction.from_function(g, lambda x: np.where(x[:, 0] < -1.2, -1.0, 1.0 + x[:, 0] ** 2))
    reach = 0.1
    region = Ball((0.0,), 0.5)
    assert level_set_measure(u, 0.5, Ball((0.0,), 0.5 + reach), "<") == 0.0
    assert cross_interaction(u, 0.5, "+", region, reach, 0.5, 2.0) == 0.0


def test_tail_constant_oracle():
    g = Grid((-1.5,), (1.5,), 1 / 64)
    one = GridFunction.constant(g, 1.0)
    assert tail(one, [0.0], 1.0, 0.5, 2.0) == pytest.approx(1.0, abs=1e-3)
    assert tail_ns(one, [0.0], 1.0, 0.5, 2.0) == pytest.approx(1.0, abs=1e-3)
    # for u = 1 the integral scales as R^-sp, so Tail is R-independent
    r1 = tail(one, [0.0], 0.5, 0.5, 2.0)
    assert tail(one, [0.0], 1.0, 0.5, 2.0) / r1 == pytest.approx(1.0, abs=1e-3)
    zero = GridFunction.constant(g, 0.0)
    assert tail(zero, [0.0], 1.0, 0.5, 2.0) == 0.0
    assert tail_ns(zero, [0.0], 1.0, 0.5, 2.0) == 0.0


def test_tail_ns_definition():
    g = Grid((-1.5,), (1.5,), 1 / 64)
    u = GridFunction.from_function(g, lambda x: np.cos(x[:, 0]), exterior=ExteriorExtension.constant(0.5))
    for R, s, p in [(0.3, 0.4, 2.0), (0.7, 0.6, 3.0)]:
        assert tail_ns(u, [0.1], R, s, p) * R ** (s * p / (p - 1)) == pytest.approx(tail(u, [0.1], R, s, p),
                                                                                     rel=1e-14)


def test_tail_compact_support_is_zero():
    g = Grid((-1.5,), (1.5,), 1 / 64)
    u = GridFunction.from_function(g, lambda x: np.maximum(0.5 - np.abs(x[:, 0]), 0.0),
                                   exterior=ExteriorExtension.zero())
    assert tail(u, [0.0], 0.6, 0.5, 2.0) == 0.0


def test_tail_power_extension():
    g = Grid((-1.0,), (1.0,), 1 / 64)
    ok = GridFunction(g, np.zeros(g.n_cells), ExteriorExtension.power(0.5, 1.0))
    # outside the box: 2 int_1^inf t^0.5 t^-2 dt = 4; inside |x| < 1: zero
    assert tail(ok, [0.0], 0.5, 0.5, 2.0) ** 1 == pytest.approx(0.5 * 0.5**1.0 * 4.0, rel=1e-8)
    bad = GridFunction(g, np.zeros(g.n_cells), ExteriorExtension.power(1.0, 1.0))
    with pytest.raises(DivergentTailError):
        tail(bad, [0.0], 0.5, 0.5, 2.0)


def test_level_sets():
    h = 1 / 64
    g = Grid((-1.5,), (1.5,), h)
    u = GridFunction.from_function(g, lambda x: x[:, 0])
    B = Ball((0.0,), 1.0)
    assert abs(level_set_measure(u, 0.0, B, ">") - 1.0) <= h
    assert level_set_measure(u, -5.0, B, ">") == pytest.approx(2.0)
    k = g.centers[100, 0]
    total = level_set_measure(u, k, B, ">") + level_set_measure(u, k, B, "<")
    eq = level_set_measure(u, k, B, ">=") - level_set_measure(u, k, B, ">")
    assert total == pytest.approx(2.0 - eq)
    assert eq == pytest.approx(h)


def test_truncations():
    g = Grid((-1.25,), (1.25,), 0.5)
    u = GridFunction.from_function(g, lambda x: x[:, 0])
    plus, minus = truncate(u, 0.0, "+"), truncate(u, 0.0, "-")
    assert minus.evaluate([[-0.5]])[0] == 0.5
    assert np.allclose(plus.values - minus.values, u.values)
    pts = np.array([[-3.0], [2.5]])
    assert np.allclose(plus.evaluate(pts) - minus.evaluate(pts), u.evaluate(pts))
    c = GridFunction.constant(g, 0.7)
    for sg in "+-":
        t = truncate(c, 0.7, sg)
        assert np.all(t.values == 0) and np.all(t.evaluate(pts) == 0)


def test_oscillation():
    h = 1 / 128
    g = Grid((-1.0,), (1.0,), h)
    u = GridFunction.from_function(g, lambda x: x[:, 0])
    assert oscillation(GridFunction.constant(g, 2.0), Ball((0.0,), 0.5)) == 0.0
    assert abs(oscillation(u, Ball((0.0,), 0.3)) - 0.6) <= 2 * h
    assert oscillation(u, Ball((0.0,), 0.2)) <= oscillation(u, Ball((0.0,), 0.4))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1.0, 1.0), st.floats(0.1, 0.9), st.sampled_from([1.5, 2.0, 3.0]))
def test_seminorm_truncation_and_region_monotone(seed, k, s, p):
    g = Grid((-1.0,), (1.0,), 1 / 32)
    u = GridFunction(g, np.random.default_rng(seed).normal(size=g.n_cells))
    B = Ball((0.0,), 0.8)
    full = gagliardo_seminorm_p(u, B, s, p, quadrature="lattice")
    assert gagliardo_seminorm_p(truncate(u, k, "+"), B, s, p, quadrature="lattice") <= full * (1 + 1e-12)
    assert gagliardo_seminorm_p(u, Ball((0.0,), 0.4), s, p, quadrature="lattice") <= full * (1 + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0), st.floats(0.01, 3.0))
def test_weighted_seminorm_embedding(seed, frac, delta):
    s, p = 0.6, 2.0
    sigma = frac * s
    g = Grid((-1.0,), (1.0,), 1 / 32)
    u = GridFunction(g, np.random.default_rng(seed).normal(size=g.n_cells))
    rep = estimate_embedding_constants([u], s, p, "lower_order", R=0.9, sigma=sigma, delta=delta)
    assert rep.passed, rep.samples
