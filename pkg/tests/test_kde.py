import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfkde.kde import (
    BandwidthSchedule,
    bandwidth,
    build_estimate,
    estimate_charfn,
    eval_derivative_estimate,
    eval_estimate,
    eval_positive_part,
)
from pfkde.kernels import epanechnikov_kernel, gaussian_fourth_order_kernel, gaussian_kernel
from pfkde.pf_core import ParticleCloud, empirical_charfn
from pfkde.quadrature import GridSpec, integrate_refined
from pfkde.rng import make_rng


def normal_pdf(x):
    return np.exp(-0.5 * x**2) / np.sqrt(2 * np.pi)


def test_bandwidth_examples():
    assert bandwidth(BandwidthSchedule(2), 100) == pytest.approx(0.31623, abs=1e-5)
    assert bandwidth(BandwidthSchedule(1, alpha=0.7), 1) == 0.7
    assert bandwidth(BandwidthSchedule(1, deriv_order=1), 64) == pytest.approx(0.43528, abs=1e-5)
    assert BandwidthSchedule(1).rate == pytest.approx(-2 / 3)


def test_bandwidth_consistency_trend():
    for d in (1, 2, 3):
        s = BandwidthSchedule(d)
        ns = 10.0 ** np.arange(2, 7)
        h = np.array([s(int(n)) for n in ns])
        assert np.all(np.diff(h) < 0)
        assert np.all(np.diff(ns * h**d) > 0)


def test_invalid_bandwidth():
    with pytest.raises(ValueError):
        build_estimate(ParticleCloud(np.zeros((2, 1))), gaussian_kernel(1), 0.0)
    with pytest.raises(ValueError):
        BandwidthSchedule(1, alpha=-1.0)


def test_weighted_cloud_rejected():
    cloud = ParticleCloud(np.zeros((2, 1)), weights=[0.5, 0.5])
    with pytest.raises(ValueError):
        build_estimate(cloud, gaussian_kernel(1), 1.0)


def test_single_particle_is_kernel():
    est = build_estimate(ParticleCloud(np.zeros((1, 1))), gaussian_kernel(1), 1.0)
    x = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(est(x), normal_pdf(x), rtol=1e-14)


def test_two_particle_example():
    est = build_estimate(ParticleCloud(np.array([[-1.0], [1.0]])), gaussian_kernel(1), 0.5)
    expected = (1 / (2 * 0.5)) * (normal_pdf(-2.0) + normal_pdf(2.0))
    assert est(np.zeros(1))[0] == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.107982, abs=1e-6)


def test_empty_and_far_points():
    est = build_estimate(ParticleCloud(make_rng(0).standard_normal((30, 1))), gaussian_kernel(1), 0.3)
    assert eval_estimate(est, np.zeros((0, 1))).shape == (0,)
    far = est.cloud.particles.max() + 10 * 0.3 + 5
    assert est(np.array([far]))[0] < 1e-12


def test_matches_double_loop():
    rng = make_rng(1)
    x = rng.standard_normal((25, 2))
    pts = rng.standard_normal((15, 2))
    k = epanechnikov_kernel(2)
    h = 0.8
    est = build_estimate(ParticleCloud(x), k, h)
    ref = np.zeros(len(pts))
    for a, p in enumerate(pts):
        for xi in x:
            ref[a] += k.evaluate(((p - xi) / h)[None, :])[0]
    ref /= len(x) * h**2
    np.testing.assert_allclose(eval_estimate(est, pts), ref, atol=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_mass_one(d):
    x = make_rng(d).standard_normal((40, d))
    est = build_estimate(ParticleCloud(x), gaussian_kernel(d), 0.4)
    lo, hi = x.min() - 6, x.max() + 6
    val, _ = integrate_refined(est, GridSpec((lo,) * d, (hi,) * d, 65), tol=1e-8)
    assert val == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 2.0), st.integers(0, 1000))
def test_translation_equivariance(s, h, seed):
    x = make_rng(seed).standard_normal((10, 1))
    pts = np.linspace(-3, 3, 9)
    a = build_estimate(ParticleCloud(x), gaussian_kernel(1), h)
    b = build_estimate(ParticleCloud(x + s), gaussian_kernel(1), h)
    np.testing.assert_allclose(b(pts + s), a(pts), rtol=1e-9, atol=1e-15)


def test_positive_part():
    x = make_rng(2).standard_normal((30, 1))
    g = build_estimate(ParticleCloud(x), gaussian_kernel(1), 0.3)
    pts = np.linspace(-4, 4, 101)
    np.testing.assert_array_equal(eval_positive_part(g, pts), eval_estimate(g, pts))
    signed = build_estimate(ParticleCloud(np.array([[-1.0], [1.0]])), gaussian_fourth_order_kernel(1), 0.3)
    raw = eval_estimate(signed, pts)
    assert raw.min() < 0
    pos = eval_positive_part(signed, pts)
    assert np.all(pos[raw < 0] == 0)
    np.testing.assert_array_equal(pos[raw >= 0], raw[raw >= 0])


def test_positive_part_reduces_ise():
    pts = np.linspace(-6, 6, 1201)
    ref = normal_pdf(pts)
    w = np.full(pts.size, pts[1] - pts[0])
    w[[0, -1]] *= 0.5
    k = gaussian_fourth_order_kernel(1)
    for seed in range(20):
        est = build_estimate(ParticleCloud(make_rng(seed).standard_normal((15, 1))), k, 0.4)
        raw = est(pts)
        assert w @ (np.maximum(raw, 0) - ref) ** 2 <= w @ (raw - ref) ** 2


def test_derivative_examples():
    est = build_estimate(ParticleCloud(np.zeros((1, 1))), gaussian_kernel(1), 1.0)
    x = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(eval_derivative_estimate(est, (1,), x), -x * normal_pdf(x), atol=1e-15)
    np.testing.assert_array_equal(eval_derivative_estimate(est, (0,), x), eval_estimate(est, x))


def test_derivative_matches_finite_differences():
    rng = make_rng(3)
    est = build_estimate(ParticleCloud(rng.standard_normal((20, 2))), gaussian_kernel(2), 0.5)
    pts = rng.uniform(-2, 2, size=(30, 2))
    eps = 1e-5
    for j, mi in enumerate([(1, 0), (0, 1)]):
        e = np.zeros(2)
        e[j] = eps
        fd = (est(pts + e) - est(pts - e)) / (2 * eps)
        np.testing.assert_allclose(eval_derivative_estimate(est, mi, pts), fd, atol=1e-5)


def test_derivative_unavailable():
    est = build_estimate(ParticleCloud(np.zeros((2, 1))), epanechnikov_kernel(1), 1.0)
    with pytest.raises(ValueError):
        eval_derivative_estimate(est, (2,), np.zeros(3))


def test_charfn_identity_and_limits():
    rng = make_rng(4)
    cloud = ParticleCloud(rng.standard_normal((50, 1)))
    k = gaussian_kernel(1)
    est = build_estimate(cloud, k, 0.7)
    assert estimate_charfn(est, np.zeros(1)) == pytest.approx(1.0)
    for w in (0.3, 1.0, 2.5):
        om = np.array([w])
        assert estimate_charfn(est, om) == empirical_charfn(cloud, om) * float(k.fourier(0.7 * om))
    tiny = build_estimate(cloud, k, 1e-9)
    assert estimate_charfn(tiny, np.array([1.3])) == pytest.approx(empirical_charfn(cloud, np.array([1.3])), abs=1e-12)


def test_charfn_matches_quadrature():
    cloud = ParticleCloud(make_rng(5).standard_normal((12, 1)))
    est = build_estimate(cloud, gaussian_kernel(1), 0.5)
    x = np.linspace(-15, 15, 30001)
    p = est(x)
    for w in (0.0, 1.0, 3.0, 5.0):
        quad = np.trapezoid(np.exp(1j * w * x) * p, x)
        assert estimate_charfn(est, np.array([w])) == pytest.approx(quad, abs=1e-5)
