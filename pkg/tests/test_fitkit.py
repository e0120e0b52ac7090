import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import least_squares

from fiberlattice.fitkit import (DataSeries, FitWarning, NonConvergenceError, RankDeficiencyError,
                                 atom_number, double_gaussian_model, extract_fax, fax_model,
                                 fit_double_gaussian, fit_fax_vs_period, fit_lifetime,
                                 fit_saturation, fit_spectrum, lifetime_model, nlls_fit,
                                 saturation_model, spectrum_guess, spectrum_model, transmission)
from fiberlattice.quantities import RB85, mK
from fiberlattice.synthetic import lifetime_data, saturation_data, spectrum_data

TRUE_SPEC = (10.9, 3e6, 12e6, 0.0)      # OD, delta_LS, gamma_eff, y0


def linear(x, a, b):
    return a * x + b


def test_transmission_examples():
    assert transmission(1.0, 1.0, 0.2) == 1.0
    assert transmission(0.2, 1.0, 0.2) == 0.0
    assert transmission(0.5, 1.0, 0.2) == pytest.approx(0.375, rel=1e-15)
    with pytest.raises(ValueError):
        transmission(0.5, 0.2, 0.2)


def test_linear_model_matches_closed_form(rng):
    x = np.linspace(0, 10, 25)
    y = 1.7 * x - 0.4 + 0.1 * rng.standard_normal(x.size)
    res = nlls_fit(linear, DataSeries(x, y), [1.0, 0.0], names=["a", "b"])
    A = np.vstack([x, np.ones_like(x)]).T
    exact = np.linalg.lstsq(A, y, rcond=None)[0]
    assert np.allclose(res.values, exact, rtol=1e-10, atol=1e-12)
    # unweighted: covariance scaled by the reduced chi-square
    cov = np.linalg.inv(A.T @ A) * res.chi2_red
    assert np.allclose(res.errors, np.sqrt(np.diag(cov)), rtol=1e-6)


def test_matches_scipy_least_squares(rng):
    x = np.linspace(-40e6, 46e6, 87)
    data = spectrum_data(rng=rng)
    res = fit_spectrum(data)
    ref = least_squares(lambda p: (data.y - spectrum_model(x, *p)) / data.sigma, res.values * 1.02,
                        x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    assert np.allclose(res.values, ref.x, rtol=1e-6)
    J = ref.jac
    cov = np.linalg.inv(J.T @ J)
    assert np.allclose(res.errors, np.sqrt(np.diag(cov)), rtol=1e-3)


def test_fixed_point_converges_immediately():
    x = np.linspace(-40e6, 46e6, 87)
    data = DataSeries(x, spectrum_model(x, *TRUE_SPEC), np.full(x.size, 0.01))
    res = nlls_fit(spectrum_model, data, list(TRUE_SPEC), names=list("abcd"))
    assert res.iterations <= 2
    assert res.step_norm == 0.0
    assert np.array_equal(res.values, TRUE_SPEC)


def test_cost_never_increases():
    x = np.linspace(-40e6, 46e6, 87)
    data = DataSeries(x, spectrum_model(x, *TRUE_SPEC), np.full(x.size, 0.01))
    costs = []
    for n in range(1, 8):
        try:
            costs.append(nlls_fit(spectrum_model, data, [6.0, 0.0, 20e6, 0.05], max_iter=n).cost)
        except NonConvergenceError as exc:
            costs.append(exc.state["cost"])
    assert all(b <= a for a, b in zip(costs, costs[1:]))


def test_nonconvergence_reports_state():
    x = np.linspace(-40e6, 46e6, 87)
    data = DataSeries(x, spectrum_model(x, *TRUE_SPEC))
    with pytest.raises(NonConvergenceError) as info:
        nlls_fit(spectrum_model, data, [6.0, 0.0, 20e6, 0.05], max_iter=1)
    assert set(info.value.state["params"]) == {"p0", "p1", "p2", "p3"}


def test_rank_deficiency_names_parameters():
    x = np.linspace(0, 1, 10)
    with pytest.raises(RankDeficiencyError) as info:
        nlls_fit(lambda x, a, b: (a + b) * x, DataSeries(x, 2 * x), [1.0, 0.5], names=["a", "b"])
    assert set(info.value.params) == {"a", "b"}


def test_preconditions():
    x = np.linspace(0, 1, 3)
    with pytest.raises(ValueError):
        nlls_fit(spectrum_model, DataSeries(x, x), [1, 0, 1e7, 0])
    with pytest.raises(ValueError):
        nlls_fit(linear, DataSeries(x, x), [2.0, 0.0], bounds=([0, 0], [1, 1]))
    with pytest.raises(ValueError):
        DataSeries(x, x, sigma=np.zeros(3))


def test_spectrum_model_limits():
    assert spectrum_model(1e15, 10.9, 3e6, 12e6, 0.03) == pytest.approx(1.03)
    assert spectrum_model(3e6, 2.0, 3e6, 12e6, 0.0) == pytest.approx(math.exp(-2.0))


def test_spectrum_guess_heuristics():
    x = np.linspace(-200e6, 200e6, 401)
    g = spectrum_guess(DataSeries(x, spectrum_model(x, 2.0, 5e6, 10e6, 0.0)))
    assert g[0] == pytest.approx(2.0, rel=0.05)
    assert g[1] == pytest.approx(5e6, abs=1e6)
    assert g[2] == pytest.approx(10e6, rel=0.25)


def test_spectrum_zero_noise_exact():
    x = np.linspace(-40e6, 46e6, 87)
    true = (2.3, -1.5e6, 9e6, 0.02)
    res = fit_spectrum(DataSeries(x, spectrum_model(x, *true)))
    assert np.allclose(res.values, true, rtol=1e-8)


def test_spectrum_one_percent_noise_within_3_sigma():
    hits = 0
    for seed in range(20):
        res = fit_spectrum(spectrum_data(noise=0.01, rng=np.random.default_rng(seed)))
        hits += abs(res["OD"] - 10.9) < 3 * res.error("OD")
    assert hits >= 19


def test_spectrum_od_uncertainty_scale():
    res = fit_spectrum(spectrum_data(rng=np.random.default_rng(8)))
    assert abs(res["OD"] - 10.9) < 3 * res.error("OD")
    assert 0.8 < res.error("OD") < 2.0


def test_spectrum_tiny_od_and_warning():
    rng = np.random.default_rng(4)
    data = spectrum_data(od=0.05, noise=0.002, rng=rng)
    with pytest.warns(FitWarning):
        res = fit_spectrum(data)
    assert res.flags["no_dip"]
    assert res["OD"] == pytest.approx(0.05, abs=0.01)


def test_saturation_half_point_and_fit():
    assert saturation_model(400e-12, 6.2e-9, 400e-12) == pytest.approx(3.1e-9)
    hits = 0
    for seed in range(20):
        res = fit_saturation(saturation_data(rng=np.random.default_rng(seed)))
        hits += abs(res["P_abs_max"] - 6.2e-9) < 3 * res.error("P_abs_max")
        assert res.flags["brackets_P_sat"]
    assert hits >= 19
    assert 0.05e-9 < res.error("P_abs_max") < 0.2e-9


def test_saturation_linear_data_warn_rank_deficiency():
    p = np.geomspace(1e-5, 1e-3, 20) * 400e-12
    with pytest.warns(FitWarning, match="rank-deficient"):
        with pytest.raises(RankDeficiencyError):
            fit_saturation(DataSeries(p, 15.5 * p))


def test_atom_number_values_and_linearity():
    N, sN = atom_number(6.2e-9, 0.1e-9)
    assert abs(N - 1270) < 3 * math.hypot(sN, 35)
    assert N == pytest.approx(1278, rel=0.01)
    a, _ = atom_number(2 * 6.2e-9)
    b, _ = atom_number(0.5 * 6.2e-9)
    assert a == 2 * N and b == 0.5 * N
    assert 10.9 / 1270 == pytest.approx(0.0086, abs=0.0001)


def test_atom_number_uses_species_power():
    p = RB85.max_scattered_power
    assert atom_number(10 * p)[0] == pytest.approx(10.0, rel=1e-12)


def test_lifetime_noiseless_and_amplitude_invariance():
    t = np.arange(5e-3, 61e-3, 5e-3)
    y = lifetime_model(t, 10.9, 14.7e-3)
    res = fit_lifetime(DataSeries(t, y))
    assert res["tau"] == pytest.approx(14.7e-3, rel=1e-6)
    res3 = fit_lifetime(DataSeries(t, 3.7 * y))
    assert res3["tau"] == pytest.approx(res["tau"], rel=1e-8)
    with_floor = fit_lifetime(DataSeries(t, y + 0.3), floor=True)
    assert with_floor["offset"] == pytest.approx(0.3, rel=1e-5)


def test_lifetime_noise_reproduces_quoted_uncertainty():
    hits = 0
    errs = []
    for seed in range(20):
        res = fit_lifetime(lifetime_data(rng=np.random.default_rng(seed)))
        hits += abs(res["tau"] - 14.7e-3) < 3 * res.error("tau")
        errs.append(res.error("tau"))
    assert hits >= 19
    assert 0.9e-3 < np.median(errs) < 2.0e-3


def test_lifetime_flat_data_flagged():
    t = np.arange(5e-3, 61e-3, 5e-3)
    y = 5.0 * np.exp(-t / 10.0)
    with pytest.warns(FitWarning):
        res = fit_lifetime(DataSeries(t, y))
    assert res.flags["tau_unbounded"]
    with pytest.raises(ValueError):
        fit_lifetime(DataSeries(t[:3], y[:3]))


def dg_data(rng=None, hump=0.1, noise=0.0):
    f = np.linspace(60e3, 450e3, 60)
    y = double_gaussian_model(f, 0.05, 0.6, 294e3, 12e3, hump, 1.0, 8e3)
    if rng is not None:
        y = y + noise * rng.standard_normal(f.size)
    return DataSeries(f, y, np.full(f.size, max(noise, 1e-3)))


def test_double_gaussian_recovers_fax():
    res = fit_double_gaussian(dg_data(np.random.default_rng(1), noise=0.01))
    assert not res.flags["single_gaussian"]
    fax, err = extract_fax(res)
    assert fax == pytest.approx(147e3, rel=0.01)
    assert res["rho"] * res["c1"] / 2 == pytest.approx(147e3, rel=0.01)


def test_double_gaussian_dips_mode():
    d = dg_data(np.random.default_rng(2), noise=0.01)
    res = fit_double_gaussian(DataSeries(d.x, 1 - d.y, d.sigma), dips=True)
    assert extract_fax(res)[0] == pytest.approx(147e3, rel=0.01)
    assert res.flags["dips"]


def test_double_gaussian_single_fallback():
    res = fit_double_gaussian(dg_data(np.random.default_rng(3), hump=0.0, noise=0.01))
    assert res.flags["single_gaussian"]
    assert res.names == ["base", "A1", "c1", "s1"]
    assert extract_fax(res)[0] == pytest.approx(res["c1"] / 2, rel=1e-15)
    assert extract_fax(res)[0] == pytest.approx(147e3, rel=0.01)


def test_fax_vs_period_exact_and_noisy():
    d = np.array([0.88, 1.0, 1.2, 1.5]) * 1e-6
    U = mK(0.443)
    res = fit_fax_vs_period(DataSeries(d, fax_model(d, U)))
    assert res["U0"] == pytest.approx(U, rel=1e-10)
    assert res.flags["U0_mK"] == pytest.approx(0.443, rel=1e-10)
    # 0.9 % per-point noise reproduces an uncertainty of about kB 0.004 mK
    hits, errs = 0, []
    for seed in range(30):
        rng = np.random.default_rng(seed)
        f = fax_model(d, U)
        s = 0.009 * f
        r = fit_fax_vs_period(DataSeries(d, f + s * rng.standard_normal(4), s))
        hits += abs(r["U0"] - U) < 3 * r.error("U0")
        errs.append(r.flags["U0_mK_err"])
    assert hits >= 28
    assert np.median(errs) == pytest.approx(0.004, rel=0.3)
    with pytest.raises(ValueError):
        fit_fax_vs_period(DataSeries(d[:2], fax_model(d[:2], U)))


@given(st.permutations(range(87)))
def test_spectrum_fit_permutation_invariant(perm):
    base = spectrum_data(rng=np.random.default_rng(11))
    idx = np.array(perm)
    shuffled = DataSeries(base.x[idx], base.y[idx], base.sigma[idx])
    a, b = fit_spectrum(base), fit_spectrum(shuffled)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.errors, b.errors)


def test_uncertainty_scales_as_inverse_sqrt_n():
    one = spectrum_data(rng=np.random.default_rng(21))
    four = DataSeries(np.tile(one.x, 4), np.tile(one.y, 4), np.tile(one.sigma, 4))
    a, b = fit_spectrum(one), fit_spectrum(four)
    assert np.allclose(b.values, a.values, rtol=1e-7)
    assert np.allclose(b.errors / a.errors, 0.5, rtol=1e-5)


def test_uncertainty_scaling_independent_noise():
    rng = np.random.default_rng(22)
    x = np.linspace(-40e6, 46e6, 87)
    true = (2.0, 3e6, 12e6, 0.0)

    def fit(k):
        xx = np.tile(x, k)
        yy = spectrum_model(xx, *true) + 0.016 * rng.standard_normal(xx.size)
        return fit_spectrum(DataSeries(xx, yy, np.full(xx.size, 0.016)))
    assert np.allclose(fit(4).errors / fit(1).errors, 0.5, rtol=0.05)
