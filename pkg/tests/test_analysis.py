import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as spi
from scipy import special

from pfkde.analysis import (
    BoundReport,
    MiseReport,
    Lt_recursion,
    amise_bandwidth,
    bound_report,
    ct_recursion,
    fit_loglog_slope,
    fourier_mise_exact,
    frequency_integral,
    gaussian_Kb_constants,
    iid_ise_replications,
    ise,
    kb_sobolev_alternative_form,
    kb_sobolev_closed_form,
    mise_monte_carlo,
    sobolev_integral,
    theorem_bound,
    verify_lemma3,
)
from pfkde.errors import NumericalError, QuadratureError
from pfkde.kde import BandwidthSchedule, build_estimate
from pfkde.kernels import Kernel, gaussian_kernel
from pfkde.model import LinearGaussianModel, simulate_trajectory
from pfkde.oracle import grid_filter_run, kalman_envelope
from pfkde.pf_core import ParticleCloud, run_filter
from pfkde.quadrature import GridSpec


def normal_phi(w):
    return np.exp(-0.5 * np.sum(w * w, axis=1))


def scalar_model(F=1.0, H=1.0, Q=2.0, R=1.0, mu0=0.0, S0=1.0):
    return LinearGaussianModel([[F]], [[H]], [[Q]], [[R]], [mu0], [[S0]])


# ---------------------------------------------------------------- ise


def test_ise_identical_is_zero():
    f = lambda x: np.exp(-x[:, 0] ** 2)
    assert ise(f, f, GridSpec((-5.0,), (5.0,), 101)) == 0.0


def test_ise_disjoint_boxcars():
    w = 0.5
    a = lambda x: np.where((x[:, 0] >= 0) & (x[:, 0] < w), 1 / w, 0.0)
    b = lambda x: np.where((x[:, 0] >= 2) & (x[:, 0] < 2 + w), 1 / w, 0.0)
    # nodes on multiples of 1/1000 so the box edges are resolved
    grid = GridSpec((-1.0,), (4.0,), 5001)
    assert ise(a, b, grid) == pytest.approx(2 / w, rel=1e-3)


def test_ise_single_particle():
    x1 = 0.8
    est = build_estimate(ParticleCloud(np.array([[x1]])), gaussian_kernel(1), 1.0)
    ref = lambda x: np.exp(-0.5 * x[:, 0] ** 2) / np.sqrt(2 * np.pi)
    val = ise(est, ref, GridSpec((-12.0,), (12.0,), 4001))
    f = lambda x: (np.exp(-0.5 * (x - x1) ** 2) - np.exp(-0.5 * x**2)) ** 2 / (2 * np.pi)
    oracle, _ = spi.quad(f, -np.inf, np.inf, epsabs=1e-14)
    assert val == pytest.approx(oracle, rel=1e-9)
    # closed form (1 - exp(-x1^2 / 4)) / sqrt(pi)
    assert oracle == pytest.approx((1 - np.exp(-(x1**2) / 4)) / np.sqrt(np.pi), rel=1e-9)


# ---------------------------------------------------------------- slopes and MISE


def test_fit_slope_exact_power_law():
    ns = [10, 100, 1000]
    slope, intercept, resid = fit_loglog_slope(ns, [3 * n**-0.7 for n in ns])
    assert slope == pytest.approx(-0.7)
    assert intercept == pytest.approx(np.log(3))
    np.testing.assert_allclose(resid, 0, atol=1e-12)


def test_mise_single_n_has_no_slope():
    model = scalar_model()
    rep = mise_monte_carlo(model, gaussian_kernel(1), BandwidthSchedule(1), [50], 3, 4, 1)
    assert rep.fitted_slope is None
    assert len(rep.mise_estimates) == 1 and rep.mise_estimates[0] > 0
    assert rep.target_slope == pytest.approx(-2 / 3)


def test_mise_no_randomness_zero_se():
    # Q = 0, Sigma0 = 0: every particle sits at mu0 forever
    model = LinearGaussianModel([[1.0]], [[1.0]], [[0.0]], [[1.0]], [0.5], [[0.0]])
    ref = lambda x: np.exp(-0.5 * (x[:, 0] - 0.5) ** 2) / np.sqrt(2 * np.pi)
    rep = mise_monte_carlo(model, gaussian_kernel(1), BandwidthSchedule(1), [20, 40], 3, 5, 2,
                           reference=ref, domain=GridSpec((-8.0,), (8.0,), 801))
    assert rep.std_errors == [0.0, 0.0]


def test_mise_is_deterministic_and_thread_independent():
    model = scalar_model(R=4.0)
    args = (model, gaussian_kernel(1), BandwidthSchedule(1), [30, 60], 4, 6, 11)
    a = mise_monte_carlo(*args, workers=1)
    b = mise_monte_carlo(*args, workers=3)
    assert a.mise_estimates == b.mise_estimates
    assert a.ise_values == b.ise_values


def test_mise_uses_fixed_observations_and_stream_seeds():
    model = scalar_model(R=4.0)
    rep = mise_monte_carlo(model, gaussian_kernel(1), BandwidthSchedule(1), [40], 5, 2, 9)
    obs = simulate_trajectory(model, 5, (9, 0)).observations
    run = run_filter(model, obs, 40, (9, 40, 1), keep_clouds=False)
    est = build_estimate(run.final, gaussian_kernel(1), 40 ** (-1 / 3))
    assert rep.ise_values[40][1] > 0
    from pfkde.oracle import kalman_run, kalman_density
    from pfkde.analysis import _auto_domain
    b = kalman_run(model, obs)[-1]
    grid = _auto_domain(b.mu, np.sqrt(np.diag(b.sigma)), 40 ** (-1 / 3))
    assert rep.ise_values[40][1] == ise(est, lambda p: kalman_density(b, p), grid)


def test_mise_degeneracy_budget():
    from pfkde.model import StateSpaceModel

    # uniform observation noise of half-width 0.05: tiny clouds often miss y
    def obs_logpdf(t, y, x):
        return np.where(np.abs(y[0] - x[:, 0]) <= 0.05, np.log(10.0), -np.inf)

    model = StateSpaceModel(
        1, 1,
        initial_sampler=lambda n, rng: rng.standard_normal((n, 1)),
        initial_logdensity=None,
        transition_sampler=lambda t, x, rng: x + rng.standard_normal(x.shape),
        observation_logdensity=obs_logpdf,
        observation_sampler=lambda t, x, rng: x + rng.uniform(-0.05, 0.05, size=x.shape),
    )
    ref = lambda x: np.zeros(x.shape[0])
    with pytest.raises(NumericalError):
        mise_monte_carlo(model, gaussian_kernel(1), BandwidthSchedule(1), [2], 5, 20, 3,
                         reference=ref, domain=GridSpec((-10.0,), (10.0,), 201))


def test_mise_report_json_round_trip():
    rep = MiseReport([1, 2], [0.5, 0.25], [0.1, 0.1], 3, -1.0, -2 / 3, [0.0, 0.0], [1.0, 0.8], [0, 1],
                     {1: [0.4, 0.5, 0.6], 2: [0.2, math.nan, 0.3]})
    again = MiseReport.from_dict(json.loads(rep.to_json()))
    assert again.mise_estimates == rep.mise_estimates
    assert math.isnan(again.ise_values[2][1])


def test_mise_report_rejects_negative():
    with pytest.raises(ValueError):
        MiseReport([1], [-0.1], [0.0], 2, None, -0.5)


# ---------------------------------------------------------------- Fourier MISE


def test_fourier_mise_against_independent_quadrature():
    h, n = 0.5, 100
    f = lambda w: (1 - np.exp(-0.5 * h**2 * w**2)) ** 2 * np.exp(-(w**2)) + (
        np.exp(-(h**2) * w**2) - np.exp(-(1 + h**2) * w**2)
    ) / n
    oracle, _ = spi.quad(f, -np.inf, np.inf, epsabs=1e-14)
    oracle /= 2 * np.pi
    assert fourier_mise_exact(gaussian_kernel(1), normal_phi, h, n) == pytest.approx(oracle, rel=1e-8)


def test_fourier_mise_large_n_limit():
    h = 0.7
    bias = spi.quad(lambda w: (1 - np.exp(-0.5 * h**2 * w**2)) ** 2 * np.exp(-(w**2)), -np.inf, np.inf)[0] / (2 * np.pi)
    assert fourier_mise_exact(gaussian_kernel(1), normal_phi, h, 10**12) == pytest.approx(bias, rel=1e-8)


def test_fourier_mise_grows_as_h_shrinks():
    # the variance term is (2 pi)^-1 n^-1 sqrt(pi) / h for small h
    vals = [fourier_mise_exact(gaussian_kernel(1), normal_phi, h, 100) for h in (0.08, 0.04, 0.02, 0.01)]
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] == pytest.approx(np.sqrt(np.pi) / (2 * np.pi * 100 * 0.01), rel=0.05)


def test_fourier_mise_flags_non_decaying_kernel():
    flat = Kernel(1, evaluate=lambda u: np.zeros(u.shape[:-1]), fourier=lambda w: np.ones(np.shape(w)[:-1]),
                  claimed_order=1)
    with pytest.raises(QuadratureError):
        fourier_mise_exact(flat, normal_phi, 0.5, 10, max_width=100)


def test_fourier_mise_matches_iid_monte_carlo_small():
    h, n, reps = 0.5, 50, 400
    domain = GridSpec((-9.0,), (9.0,), 721)
    vals = iid_ise_replications(lambda k, rng: rng.standard_normal(k), lambda x: np.exp(-0.5 * x[:, 0] ** 2) / np.sqrt(2 * np.pi),
                                gaussian_kernel(1), h, n, reps, 3, domain)
    exact = fourier_mise_exact(gaussian_kernel(1), normal_phi, h, n)
    assert abs(vals.mean() - exact) <= 3 * vals.std(ddof=1) / np.sqrt(reps)


# ---------------------------------------------------------------- empirical characteristic function moments


def test_charfn_moments_origin_exact():
    rep = verify_lemma3(lambda k, rng: rng.standard_normal(k), normal_phi, [0.0], 20, 50, 1)
    e = rep.entries[0]
    assert e.mean_phi_n == 1.0 and e.mean_err2 == 0.0 and e.se_err2 == 0.0
    assert rep.passed


def test_charfn_moments_point_mass():
    rep = verify_lemma3(lambda k, rng: np.full(k, 2.0), lambda w: np.exp(2j * w[:, 0]), [0.5, 1.0], 30, 40, 1)
    assert rep.passed
    for e in rep.entries:
        assert e.mean_err2 == pytest.approx(0.0, abs=1e-28)
        assert e.target_err2 == pytest.approx(0.0, abs=1e-15)


def test_charfn_moments_normal_variance():
    rep = verify_lemma3(lambda k, rng: rng.standard_normal(k), normal_phi, [1.0], 100, 10_000, 5)
    e = rep.entries[0]
    assert e.target_err2 == pytest.approx(0.006321, abs=1e-6)
    assert abs(e.mean_err2 - e.target_err2) <= 4 * e.se_err2
    assert rep.passed


def test_charfn_moments_detects_dependent_sampler():
    # every draw repeated: phi_n has the variance of an n/2 sample
    def sampler(k, rng):
        return np.repeat(rng.standard_normal(k // 2), 2)

    rep = verify_lemma3(sampler, normal_phi, [1.0], 100, 10_000, 5)
    assert not rep.passed


# ---------------------------------------------------------------- Sobolev integrals


def test_sobolev_normal_and_laplace():
    assert sobolev_integral(normal_phi, 1) == pytest.approx(1 / (4 * np.sqrt(np.pi)), rel=1e-8)
    assert sobolev_integral(lambda w: np.exp(-np.abs(w[:, 0])), 1) == pytest.approx(0.5 / (2 * np.pi), rel=1e-7)


@settings(max_examples=15, deadline=None)
@given(st.floats(-20, 20))
def test_sobolev_translation_invariant(s):
    a = sobolev_integral(normal_phi, 1)
    b = sobolev_integral(lambda w: normal_phi(w) * np.exp(1j * s * w[:, 0]), 1)
    assert b == pytest.approx(a, rel=1e-10)


def test_sobolev_grid_density():
    model = scalar_model(Q=2.0, H=2.0, R=1.0)
    obs = simulate_trajectory(model, 3, 1).observations
    lo, hi = kalman_envelope(model, obs)
    post = grid_filter_run(model, obs, lo, hi).posteriors[-1]
    var = post.variance()
    assert sobolev_integral(post, 1) == pytest.approx(1 / (4 * np.sqrt(np.pi) * var**1.5), rel=1e-6)


def test_sobolev_divergent():
    with pytest.raises(QuadratureError):
        sobolev_integral(lambda w: 1 / (1 + np.abs(w[:, 0])), 1, max_width=1e3)


def test_frequency_integral_two_d():
    val, _ = frequency_integral(lambda w: np.exp(-np.sum(w * w, axis=1)), 2)
    assert val == pytest.approx(np.pi, rel=1e-9)


# ---------------------------------------------------------------- bound constants


def test_kb_constants_examples():
    lam, L = gaussian_Kb_constants(np.eye(3))
    assert lam == pytest.approx(1.0)
    lam, L = gaussian_Kb_constants([[1.0]])
    assert L**2 == pytest.approx(1 / (4 * np.sqrt(np.pi)), rel=1e-9)
    lam, _ = gaussian_Kb_constants(np.diag([2.0, 5.0]))
    assert lam == pytest.approx(2.0)


def _radial_oracle(lam, d, beta):
    # (2 pi)^-d pi^{d/2} Gamma(beta + d/2) / (Gamma(d/2) lam^{beta + d/2})
    return (2 * np.pi) ** (-d) * np.pi ** (d / 2) * special.gamma(beta + d / 2) / (special.gamma(d / 2) * lam ** (beta + d / 2))


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("beta", [1, 2])
def test_kb_quadrature_matches_radial_formula(d, beta):
    lam = 1.7
    _, L = gaussian_Kb_constants(np.eye(d) * lam + 0.0, beta)
    assert L**2 == pytest.approx(_radial_oracle(lam, d, beta), rel=1e-8)


def test_kb_closed_forms():
    for d in (1, 2, 3):
        assert kb_sobolev_closed_form(2.0, d) == pytest.approx(_radial_oracle(2.0, d, 1), rel=1e-12)
    assert kb_sobolev_alternative_form(2.0, 1) == pytest.approx(kb_sobolev_closed_form(2.0, 1))
    assert kb_sobolev_alternative_form(2.0, 2) == pytest.approx(kb_sobolev_closed_form(2.0, 2) / 4)


def test_kb_rejects_indefinite():
    with pytest.raises(ValueError):
        gaussian_Kb_constants(np.diag([1.0, 0.0]))


def test_ct_recursion_examples():
    np.testing.assert_array_equal(ct_recursion(0.0, [1.0, 2.0, 3.0]), [1, 1, 1, 1])
    np.testing.assert_allclose(ct_recursion(1.0, [2.0]), [1.0, 3.0])
    with pytest.raises(NumericalError):
        ct_recursion(1.0, [1.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=20), st.floats(0, 10))
def test_ct_non_decreasing(z, g):
    c = ct_recursion(g, z)
    assert c[0] == 1.0
    assert np.all(np.diff(c) >= 0)


def test_ct_plugin_vs_grid_normalisers():
    model = scalar_model(Q=2.0, H=1.0, R=4.0)
    obs = simulate_trajectory(model, 5, 3).observations
    lo, hi = kalman_envelope(model, obs)
    exact = grid_filter_run(model, obs, lo, hi).normalizers
    plug = run_filter(model, obs, 100_000, 4, keep_clouds=False).normalizers()
    g = model.noise_density_sup
    assert ct_recursion(g, plug)[-1] == pytest.approx(ct_recursion(g, exact)[-1], rel=0.01)


def test_Lt_recursion_examples():
    np.testing.assert_allclose(Lt_recursion([0.5, 2.0], 0.3, [0.5, 2.0]), [0.3, 0.3])
    np.testing.assert_array_equal(Lt_recursion(1.0, 0.0, [0.2, 0.4]), [0.0, 0.0])


def test_theorem_bound_examples():
    knorm = (4 * np.pi) ** -0.25
    C, bound = theorem_bound(1.0, 1.0, 1.0, 1, 1, 0, 1.0, knorm, 10**6)
    assert C == pytest.approx(1.531126, abs=1e-6)
    assert bound == pytest.approx(C**2 * 1e-4)
    C2, _ = theorem_bound(0.8, 2.0, 1.0, 1, 1, 0, 3.0, knorm, 10)
    assert C2 == pytest.approx(0.8 * 2.0 + 3.0 * knorm)
    b = [theorem_bound(1, 1, 1, 1, 1, 0, 1, knorm, n)[1] for n in (10, 100, 1000)]
    assert np.all(np.diff(b) < 0)
    C3, _ = theorem_bound(1.0, 1.0, 0.5, 1, 1, 1, 1.0, 0.2, 10)
    assert C3 == pytest.approx(0.5 + 0.5 ** (-1.5) * 0.2)


def test_bound_report_round_trip():
    rep = bound_report(1.0, 1.0, 1, 1, 0, 0.53, 0.2, 0.22, [0.1, 0.12, 0.09], [100, 400])
    assert rep.c_sequence[0] == 1.0 and len(rep.c_sequence) == 4
    assert len(rep.L_sequence) == len(rep.C_sequence) == 3
    assert rep.bound_values[400][-1] < rep.bound_values[100][-1]
    again = BoundReport.from_dict(json.loads(rep.to_json()))
    assert again.bound_values == rep.bound_values


# ---------------------------------------------------------------- AMISE bandwidth


def test_amise_normal_reference():
    h = amise_bandwidth(1 / (2 * np.sqrt(np.pi)), 1.0, 3 / (8 * np.sqrt(np.pi)), 1, 100)
    assert h == pytest.approx((4 / 300) ** 0.2, rel=1e-12)
    assert h == pytest.approx(0.4216, abs=1e-4)


def test_amise_scaling_and_limit():
    a = amise_bandwidth(0.3, 1.0, 0.2, 2, 500)
    b = amise_bandwidth(0.3, 1.0, 0.2, 2, 1000)
    assert b / a == pytest.approx(2 ** (-1 / 6))
    assert amise_bandwidth(0.3, 1.0, math.inf, 1, 10) == 0.0
    assert amise_bandwidth(0.3, 1.0, 1e12, 1, 10) < 1e-2
