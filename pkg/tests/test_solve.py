import itertools

import numpy as np
import pytest

from conftest import OMEGA_1D, allen_cahn
from fracdg.energy import energy, first_variation, hat
from fracdg.errors import DivergenceError
from fracdg.kernels import KernelSpec
from fracdg.lattice import Grid, GridFunction
from fracdg.potentials import PotentialSpec
from fracdg.solve import ProblemSpec, SolverOptions, minimize, solve, solve_equation, verify_minimality

ZERO = PotentialSpec("zero")
DW = PotentialSpec("double_well", d=2.0)
K = KernelSpec(0.5, 2.0)


def _problem(g, u0, potential=ZERO, mode="minimize", **opts):
    return ProblemSpec(g, OMEGA_1D, u0, K, potential, mode, SolverOptions(**opts), reach=4.0)


def _outside(g):
    return ~OMEGA_1D.contains(g.centers)


def test_constant_data_gives_constant_minimizer():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    u, rep = minimize(_problem(g, GridFunction.constant(g, 0.3)))
    assert rep.converged
    assert np.max(np.abs(u.values - 0.3)) <= 1e-8
    assert rep.energy.total <= 1e-14


def test_double_well_with_unit_data():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    u, rep = minimize(_problem(g, GridFunction.constant(g, 1.0), DW))
    assert rep.converged and np.max(np.abs(u.values - 1.0)) <= 1e-7


def _quadratic_form(prob, idx):
    """E(v) = c + b.v + v.A.v in the Omega values, recovered by polarisation (p = 2, F = 0)."""
    base = prob.u0.values.copy()
    base[idx] = 0.0

    def E(v):
        vals = base.copy()
        vals[idx] = v
        return energy(prob.u0.with_values(vals), prob.omega, prob.kernel, prob.potential, prob.reach).total

    m = len(idx)
    c = E(np.zeros(m))
    eye = np.eye(m)
    ep = np.array([E(eye[i]) for i in range(m)])
    em = np.array([E(-eye[i]) for i in range(m)])
    diag = (ep + em) / 2 - c
    b = (ep - em) / 2
    A = np.diag(diag)
    for i, j in itertools.combinations(range(m), 2):
        A[i, j] = A[j, i] = (E(eye[i] + eye[j]) - c - b[i] - b[j] - diag[i] - diag[j]) / 2
    return c, b, A


def test_minimizer_monotone_against_exhaustive_search():
    g = Grid((-1.4,), (1.4,), 0.4)
    u0 = GridFunction.from_function(g, lambda x: np.sign(x[:, 0]))
    prob = _problem(g, u0)
    u, rep = minimize(prob)
    assert rep.converged
    idx = np.flatnonzero(OMEGA_1D.contains(g.centers))
    assert len(idx) == 5
    inner = u.values[idx]
    assert np.all(np.diff(inner) >= -1e-10)
    c, b, A = _quadratic_form(prob, idx)
    levels = np.linspace(-1.0, 1.0, 9)
    V = np.array(list(itertools.product(levels, repeat=5)))
    Ev = c + V @ b + np.einsum("ij,jk,ik->i", V, A, V)
    best = V[np.argmin(Ev)]
    assert np.all(np.diff(best) >= 0)
    assert np.max(np.abs(best - inner)) <= 0.25 / 2 + 1e-12


def test_trajectory_monotone_and_exterior_untouched():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    u0 = GridFunction.from_function(g, lambda x: np.sign(x[:, 0]))
    u, rep = minimize(_problem(g, u0, DW, relaxation=1.5))
    traj = np.array(rep.trajectory)
    assert np.all(np.diff(traj) <= 1e-12 * np.abs(traj[:-1]))
    out = _outside(g)
    assert np.array_equal(u.values[out], u0.values[out])


def test_equation_constant_and_maximum_principle():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    u, rep = solve_equation(_problem(g, GridFunction.constant(g, 2.0), mode="equation"))
    assert rep.converged and np.max(np.abs(u.values - 2.0)) <= 1e-8
    u0 = GridFunction.from_function(g, lambda x: 1.0 + 0.5 * np.sin(3 * x[:, 0]))
    u, rep = solve_equation(_problem(g, u0, mode="equation"))
    assert rep.converged
    xs = g.centers[:, 0]
    ext = 1.0 + 0.5 * np.sin(3 * np.linspace(-1.5 - 4, 1.5 + 4, 20001))
    ext = ext[np.abs(np.linspace(-5.5, 5.5, 20001)) >= 1.0]
    lo, hi = ext.min(), ext.max()
    inner = u.values[np.abs(xs) < 1]
    assert np.all(inner >= lo - 1e-10) and np.all(inner <= hi + 1e-10)


def test_comparison_principle():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    ua = GridFunction.from_function(g, lambda x: np.tanh(2 * x[:, 0]))
    ub = GridFunction.from_function(g, lambda x: np.tanh(2 * x[:, 0]) + 0.3 * np.cos(x[:, 0]) ** 2)
    sa, _ = minimize(_problem(g, ua, tol_u=1e-9))
    sb, _ = minimize(_problem(g, ub, tol_u=1e-9))
    assert np.all(sa.values <= sb.values + 10 * 1e-9)


def test_modes_agree_on_64_cells():
    g = Grid((-1.5,), (1.5,), 3 / 64)
    assert g.n_cells == 64
    u0 = GridFunction.from_function(g, lambda x: np.sign(x[:, 0]))
    tol = 1e-9
    um, rm = minimize(_problem(g, u0, DW, tol_u=tol))
    ue, re = solve_equation(_problem(g, u0, DW, mode="equation", tol_u=tol))
    assert rm.converged and re.converged
    assert np.max(np.abs(um.values - ue.values)) <= 10 * tol


def test_stationarity_of_minimizer():
    h = 1 / 32
    g = Grid((-1.5,), (1.5,), h)
    u0 = GridFunction.from_function(g, lambda x: np.sign(x[:, 0]))
    tol = 1e-9
    u, _ = minimize(_problem(g, u0, DW, tol_u=tol))
    for j in np.flatnonzero(OMEGA_1D.contains(g.centers))[::7]:
        d = hat(g, int(j))
        fv = first_variation(u, d, K, DW, OMEGA_1D, reach=4.0)
        dd = 1e-4
        curv = (first_variation(u.with_values(u.values + dd * d.values), d, K, DW, OMEGA_1D, reach=4.0)
                - first_variation(u.with_values(u.values - dd * d.values), d, K, DW, OMEGA_1D, reach=4.0)) / (2 * dd)
        # a coordinate within tol of its minimum has |dE| <= curvature * tol
        assert abs(fv) <= 10 * tol * curv


def test_minimality_audits():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    prob = _problem(g, GridFunction.constant(g, 0.5))
    u, _ = minimize(prob)
    assert verify_minimality(u, prob, trials=10, seed=1).passed
    sign = _problem(g, GridFunction.from_function(g, lambda x: np.sign(x[:, 0])), DW)
    us, _ = minimize(sign)
    assert verify_minimality(us, sign, trials=10, seed=1).passed
    vals = np.array(us.values)
    vals[48] += 0.1
    assert not verify_minimality(us.with_values(vals), sign, trials=4, seed=1).passed


def test_empty_truncation_competitor():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    prob = _problem(g, GridFunction.from_function(g, lambda x: np.sign(x[:, 0])), DW)
    u, _ = minimize(prob)
    mask = OMEGA_1D.contains(g.centers)
    k = float(np.max(u.values[mask]))
    vals = np.array(u.values)
    vals[mask] -= 0.5 * np.maximum(vals[mask] - k, 0.0)
    e = lambda w: energy(w, prob.omega, prob.kernel, prob.potential, prob.reach).total  # noqa: E731
    assert e(u.with_values(vals)) == e(u)


def test_minimality_requires_matching_exterior():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    prob = _problem(g, GridFunction.constant(g, 0.5))
    with pytest.raises(ValueError):
        verify_minimality(GridFunction.constant(g, 0.4), prob)


def test_unbounded_below_potential_diverges():
    g = Grid((-1.5,), (1.5,), 1 / 16)
    # F = -1000 u^2 beats the quadratic interaction, so every coordinate is unbounded below
    pot = PotentialSpec("smooth_table", table=((-2.0, -4000.0), (0.0, 0.0), (2.0, -4000.0)))
    with pytest.raises(DivergenceError):
        minimize(_problem(g, GridFunction.constant(g, 0.0), pot))


def test_nonconverged_report():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    u0 = GridFunction.from_function(g, lambda x: np.sign(x[:, 0]))
    _, rep = minimize(_problem(g, u0, DW, max_sweeps=2))
    assert not rep.converged and rep.iterations == 2


def test_random_init_reproducible():
    g = Grid((-1.5,), (1.5,), 1 / 32)
    u0 = GridFunction.from_function(g, lambda x: np.sign(x[:, 0]))
    a, _ = solve(_problem(g, u0, DW, init="random", seed=3, max_sweeps=3))
    b, _ = solve(_problem(g, u0, DW, init="random", seed=3, max_sweeps=3))
    assert np.array_equal(a.values, b.values)


def test_allen_cahn_fixture_is_odd():
    u = allen_cahn(1 / 128)
    inner = u.values[OMEGA_1D.contains(u.grid.centers)]
    assert np.max(np.abs(inner + inner[::-1])) <= 1e-6
    assert np.all(np.diff(inner) > 0)
