import math

import numpy as np
import pytest

from fracdg.errors import SingularityError
from fracdg.kernels import KernelSpec, angular_family, check_ellipticity, check_symmetry, eval_kernel


def test_standard_values():
    k = KernelSpec(0.5, 2.0)
    assert eval_kernel(k, [0.0], [2.0]) == pytest.approx(0.125, rel=0, abs=1e-15)
    for s, p in [(0.1, 1.5), (0.7, 3.0)]:
        assert eval_kernel(KernelSpec(s, p), [0.3], [1.3]) == pytest.approx(1 - s, rel=1e-14)


def test_truncated_support():
    k = KernelSpec(0.5, 2.0, r0=0.5, r1=1.0, variant="truncated")
    assert eval_kernel(k, [0.0], [2.0]) == 0.0
    assert eval_kernel(k, [0.0], [1.0]) == 0.0
    assert eval_kernel(k, [0.0], [0.99]) > 0.0


def test_coincident_points():
    with pytest.raises(SingularityError):
        eval_kernel(KernelSpec(0.5, 2.0), [0.1], [0.1])


def test_scaling_property():
    rng = np.random.default_rng(3)
    k = KernelSpec(0.3, 2.5)
    for _ in range(50):
        x, y = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        d = np.linalg.norm(x - y)
        assert eval_kernel(k, x, y) * d ** (2 + k.sp) == pytest.approx(1 - k.s, rel=1e-12)


def test_symmetry_builtin_variants():
    kernels = [
        KernelSpec(0.5, 2.0),
        KernelSpec(0.5, 2.0, lam=2.0, variant="angular", a0=angular_family("cos2", 0.5)),
        KernelSpec(0.5, 2.0, r0=1.0, r1=2.0, variant="truncated"),
    ]
    for k in kernels:
        for dim in (1, 2):
            rep = check_symmetry(k, samples=200, seed=5, dim=dim)
            assert rep.passed and rep.worst_ratio == 0.0


def test_symmetry_asymmetric_table_fails():
    k = KernelSpec(0.5, 2.0, variant="custom", table=(((0.5,), 1.0), ((-0.5,), 2.0)), default=1.0)
    rep = check_symmetry(k, samples=10, seed=0)
    assert not rep.passed and rep.worst_ratio > 0


def test_ellipticity_examples():
    rep = check_ellipticity(KernelSpec(0.5, 2.0, lam=1.0), samples=100)
    assert rep.passed
    assert rep.extra["worst_lower_ratio"] == 1.0 and rep.extra["worst_upper_ratio"] == 1.0
    trunc = KernelSpec(0.5, 2.0, r0=1.0, r1=2.0, variant="truncated")
    assert check_ellipticity(trunc, samples=100).passed
    assert not check_ellipticity(trunc, samples=100, global_=True).passed
    ang = KernelSpec(0.5, 2.0, lam=2.0, variant="angular", a0=angular_family("cos2", 0.5))
    assert check_ellipticity(ang, samples=300, dim=2, global_=True).passed


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(1.0, 2.0)
    with pytest.raises(ValueError):
        KernelSpec(0.5, 1.0)
    with pytest.raises(ValueError):
        KernelSpec(0.5, 2.0, lam=0.5)
    with pytest.raises(ValueError):
        KernelSpec(0.5, 2.0, variant="truncated", r0=2.0, r1=1.0)
    assert math.isinf(KernelSpec(0.5, 2.0).r0)
