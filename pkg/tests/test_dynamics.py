import numpy as np
import pytest

from fiberlattice.dynamics import (EnsembleConfig, HarmonicSampler, ModulationSpec,
                                   PreconditionError, check_timestep, depth_factors,
                                   loss_spectrum, modulation_schedule, propagate, sample_ensemble,
                                   sample_thermal, site_energy_split)
from fiberlattice.quantities import RB85, kB
from fiberlattice.trapmodel import TrapSite

M = RB85.mass
F_HARM = (140e3, 240e3, 70e3)
DT_HARM = 1 / (40 * 240e3)
OPEN = [-np.inf, np.inf] * 3


@pytest.fixture(scope="module")
def harm():
    return HarmonicSampler(F_HARM, M)


@pytest.fixture(scope="module")
def harm_site():
    return TrapSite((0.0, 0.0, 0.0), 0.0, kB * 100e-6, *F_HARM, True,
                    tuple(map(tuple, np.eye(3))))


def x_only(n, amp, f, seed=0):
    """Atoms oscillating along x only, random phases."""
    ph = np.random.default_rng(seed).uniform(0, 2 * np.pi, n)
    p = np.zeros((n, 3))
    v = np.zeros((n, 3))
    p[:, 0] = amp * np.cos(ph)
    v[:, 0] = -amp * 2 * np.pi * f * np.sin(ph)
    return p, v


def energy_gain(harm, f_mod, distortion=0.0, t_end=2e-3):
    p, v = x_only(20, 30e-9, F_HARM[0])
    mod = ModulationSpec(frequency=f_mod, epsilon=0.03, distortion=distortion)
    tr = propagate(p, v, harm, mod, DT_HARM, t_end=t_end, record_every=int(1e-4 / DT_HARM))
    return tr.energies[:, -1].mean() / tr.energies[:, 0].mean()


def test_zero_temperature_sample(site04_1um):
    s = sample_thermal(site04_1um, 0.0, 3, M)
    assert np.array_equal(s.position, site04_1um.position)
    assert np.array_equal(s.velocity, np.zeros(3))


def test_unstable_site_rejected():
    bad = TrapSite((0, 0, 0), 0.0, 0.0, *F_HARM, False)
    with pytest.raises(PreconditionError):
        sample_thermal(bad, 30e-6, 0, M)


def test_equipartition(harm_site):
    T = 30e-6
    n = 10_000
    w = 2 * np.pi * np.array(F_HARM)
    E = np.empty(n)
    for i in range(n):
        s = sample_thermal(harm_site, T, 7, M, i)
        E[i] = 0.5 * M * (s.velocity @ s.velocity) + 0.5 * M * np.sum((w * s.position) ** 2)
    err = E.std(ddof=1) / np.sqrt(n)
    assert abs(E.mean() - 3 * kB * T) < 3 * err


def test_axial_position_variance(site04_1um):
    T = 30e-6
    pos, _ = sample_ensemble(site04_1um, EnsembleConfig(count=10_000, temperature=T, seed=5), M)
    var = np.var(pos[:, 0] - site04_1um.position[0])
    expected = kB * T / (M * (2 * np.pi * site04_1um.f_ax) ** 2)
    assert var == pytest.approx(expected, rel=0.05)


def test_sampling_is_per_atom_deterministic(site04_1um):
    a = sample_thermal(site04_1um, 30e-6, 11, M, index=42)
    b = sample_thermal(site04_1um, 30e-6, 11, M, index=42)
    c = sample_thermal(site04_1um, 30e-6, 11, M, index=43)
    assert np.array_equal(a.position, b.position) and np.array_equal(a.velocity, b.velocity)
    assert not np.array_equal(a.position, c.position)


def test_energy_drift_harmonic(harm, harm_site):
    p, v = sample_ensemble(harm_site, EnsembleConfig(count=20, seed=1), M)
    tr = propagate(p, v, harm, ModulationSpec(epsilon=0.0), DT_HARM, t_end=20e-3, record_every=1)
    n = int(1e-3 / DT_HARM)
    first, last = tr.energies[:, :n].mean(1), tr.energies[:, -n:].mean(1)
    assert np.max(np.abs(last - first) / first) < 1e-4


def test_energy_drift_spline_lattice(spline04_1um, site04_1um):
    p, v = sample_ensemble(site04_1um, EnsembleConfig(count=16, temperature=10e-6), M)
    dt = 1 / (40 * site04_1um.f_rad)
    tr = propagate(p, v, spline04_1um, ModulationSpec(epsilon=0.0), dt, t_end=20e-3, record_every=1)
    E = tr.energies - sum(site_energy_split(spline04_1um, site04_1um))
    n = int(1e-3 / dt)
    first, last = E[:, :n].mean(1), E[:, -n:].mean(1)
    assert not tr.lost.any()
    assert np.max(np.abs(last - first) / first) < 1e-4


def test_parametric_resonance_at_twice_fax(harm):
    assert energy_gain(harm, 2 * F_HARM[0]) > 1e3
    assert energy_gain(harm, 3.1 * F_HARM[0]) == pytest.approx(1.0, abs=0.1)


def test_distortion_adds_response_at_fax(harm):
    assert energy_gain(harm, F_HARM[0], distortion=0.5) > 1e3
    assert energy_gain(harm, F_HARM[0], distortion=0.0) < 1.5


def test_modulation_factor_and_schedule():
    mod = ModulationSpec(frequency=1e5, epsilon=0.03, duration=1e-4, distortion=0.2)
    t = np.array([0.0, 2.5e-6, 7.5e-6])
    w = 2 * np.pi * 1e5 * t
    assert np.allclose(mod.factor(t), 1 + 0.03 * (np.sin(w) + 0.2 * np.sin(2 * w)))
    s = modulation_schedule(mod, 1e-7, ramp_to=0.25, ramp_time=1e-5)
    assert s.size == 1001 + 100
    assert s[-1] == 0.25
    with pytest.raises(ValueError):
        ModulationSpec(epsilon=1.0)


def test_timestep_precondition(harm):
    check_timestep(1 / (20 * 240e3), 240e3)
    with pytest.raises(PreconditionError):
        check_timestep(1.01 / (20 * 240e3), 240e3)
    with pytest.raises(PreconditionError):
        propagate(np.zeros(3), np.zeros(3), harm, ModulationSpec(), 1e-6, t_end=1e-5, f_max=240e3)


def test_trajectories_bit_identical(spline04_1um, site04_1um):
    p, v = sample_ensemble(site04_1um, EnsembleConfig(count=8, seed=9), M)
    mod = ModulationSpec(frequency=2 * site04_1um.f_ax, epsilon=0.03, distortion=0.05)
    dt = 1 / (40 * site04_1um.f_rad)
    a = propagate(p, v, spline04_1um, mod, dt, t_end=1e-3)
    b = propagate(p, v, spline04_1um, mod, dt, t_end=1e-3)
    assert np.array_equal(a.position, b.position)
    assert np.array_equal(a.velocity, b.velocity)
    assert np.array_equal(a.lost_step, b.lost_step)


def test_timestep_halving_converges(spline04_1um, site04_1um):
    p, v = sample_ensemble(site04_1um, EnsembleConfig(count=16, temperature=30e-6), M)
    Es = site_energy_split(spline04_1um, site04_1um)
    dt0 = 1 / (40 * site04_1um.f_rad)
    mod = ModulationSpec(frequency=1.3 * site04_1um.f_ax, epsilon=0.03)
    out = []
    for dt in (dt0, dt0 / 2, dt0 / 4):
        n = int(round(1e-4 / dt))
        tr = propagate(p, v, spline04_1um, mod, dt, t_end=n * dt)
        s = mod.factor(n * dt)
        E = spline04_1um(tr.position, s) + 0.5 * M * np.sum(tr.velocity**2, axis=1)
        out.append(E - (s * Es[0] + Es[1]))
    ok = np.all(np.isfinite(out), axis=0)
    assert ok.sum() >= 12
    e1 = np.max(np.abs(out[0][ok] - out[1][ok]) / np.abs(out[1][ok]))
    e2 = np.max(np.abs(out[1][ok] - out[2][ok]) / np.abs(out[2][ok]))
    assert e2 < 1e-3
    assert 3.0 < e1 / e2 < 5.5


def test_flat_spectrum_without_modulation(spline04_1um, site04_1um):
    f = np.linspace(0.5, 3, 5) * site04_1um.f_ax
    res = loss_spectrum(EnsembleConfig(count=60, seed=2), site04_1um, spline04_1um,
                        ModulationSpec(epsilon=0.0), f)
    assert np.all(res.series.y == res.series.y[0])
    assert 0 < res.series.y[0] <= 1


def harmonic_spectrum(harm, site, threads=1, n_freq=51, count=100):
    f = np.linspace(0.5, 3, n_freq) * site.f_ax
    return loss_spectrum(EnsembleConfig(count=count, seed=4), site, harm,
                         ModulationSpec(epsilon=0.03), f,
                         readout_depth=None, bounds=OPEN, threads=threads)


def test_harmonic_loss_peak_at_twice_fax():
    # transverse modes placed so none of their resonances fall on the grid
    freqs = (140e3, 400e3, 450e3)
    site = TrapSite((0.0, 0.0, 0.0), 0.0, kB * 100e-6, *freqs, True, tuple(map(tuple, np.eye(3))))
    res = harmonic_spectrum(HarmonicSampler(freqs, M), site)
    y = res.series.y
    i = int(np.argmin(y))
    assert res.series.x[i] == pytest.approx(2 * freqs[0], rel=0.03)
    assert y[i] < np.median(y) - 10 * res.series.sigma[i]


def test_threads_do_not_change_results(harm, harm_site):
    a = harmonic_spectrum(harm, harm_site, threads=1, n_freq=8, count=40)
    b = harmonic_spectrum(harm, harm_site, threads=3, n_freq=8, count=40)
    assert np.array_equal(a.series.y, b.series.y)


def test_depth_factors():
    assert np.array_equal(depth_factors(EnsembleConfig(count=10)), np.ones(10))
    ens = EnsembleConfig(count=2000, envelope_waist=0.8e-3, envelope_extent=1e-3, seed=3)
    q = depth_factors(ens)
    assert np.array_equal(q, depth_factors(ens))
    assert np.all((q > np.exp(-2 * 0.5**2 / 0.8**2) - 1e-12) & (q <= 1))
    with pytest.raises(ValueError):
        EnsembleConfig(envelope_waist=-1.0)


def test_depth_factor_scales_thermal_spread(harm_site):
    a = sample_thermal(harm_site, 30e-6, 1, M, 0)
    b = sample_thermal(harm_site, 30e-6, 1, M, 0, depth_factor=4.0)
    assert np.allclose(b.position, a.position / 2)
    assert np.array_equal(a.velocity, b.velocity)
