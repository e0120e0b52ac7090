import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fiberlattice.fibermode import FiberSpec
from fiberlattice.fieldsim import (BeamGeometry, CylinderScattering, GridSpec, LatticeField, PlaneSpec,
                                   PlaneWave, SeriesConvergenceError, axial_contrast,
                                   find_intensity_maxima, incident_field, scattered_field,
                                   total_intensity_map)


def _surface(R, n=360, x=0.0):
    phi = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.stack([np.full(n, x), R * np.cos(phi), R * np.sin(phi)], axis=-1), phi


def _tangential(F, phi):
    """(F_phi, F_x) from cartesian (..., 3)."""
    return -F[..., 1] * np.sin(phi) + F[..., 2] * np.cos(phi), F[..., 0]


def boundary_residual(sol: CylinderScattering, n_points=360):
    R = sol.fiber.radius
    pts, phi = _surface(R, n_points, x=0.13e-6)
    inc_E = sol.wave.field(pts, sol.fiber.n2)
    inc_H = sol.wave.hfield(pts, sol.fiber.n2)
    Er, Ep, Ex, Hr, Hp, Hx = sol.cylindrical(pts)
    ir, ip, ix, jr, jp, jx = sol.cylindrical(pts, interior=True)
    e_phi, e_x = _tangential(inc_E, phi)
    h_phi, h_x = _tangential(inc_H, phi)
    scale = max(np.abs(inc_E).max(), np.abs(inc_H).max())
    res = [e_phi + Ep - ip, e_x + Ex - ix, h_phi + Hp - jp, h_x + Hx - jx]
    return max(np.abs(r).max() for r in res) / scale


@pytest.mark.parametrize("pol", [(0, 1, 0), (1, 0, 0), (0, 0.6, 0.8j)])
def test_boundary_conditions_oblique(fiber, pol):
    geom = BeamGeometry(polarization=(0, 1, 0))
    k = np.array([math.sin(geom.theta_full / 2), 0, -math.cos(geom.theta_full / 2)])
    e = np.asarray(pol, dtype=complex)
    e = e - k * (k @ e)
    e = e / np.linalg.norm(e)
    sol = CylinderScattering(fiber, PlaneWave(780.5e-9, tuple(k), tuple(e)))
    assert boundary_residual(sol) < 1e-8


def test_doubling_order_changes_intensity_little(fiber, geom):
    pts = np.array([[0.0, y, z] for y in (-0.3e-6, 0.0, 0.2e-6) for z in (0.3e-6, 0.5e-6, 0.9e-6)])
    base = LatticeField(geom, fiber)
    N = base.solutions[0].N
    doubled = LatticeField(geom, fiber, order=2 * N)
    I1, I2 = base.intensity(pts), doubled.intensity(pts)
    assert np.max(np.abs(I2 - I1) / I1) < 1e-6


def test_index_matched_cylinder_does_not_scatter():
    f = FiberSpec(n1=1.0 + 1e-13, n2=1.0)
    w = BeamGeometry().plane_waves()[0]
    pts = np.array([[0, 0.5e-6, 0.3e-6], [0.1e-6, -0.4e-6, 0.6e-6]])
    assert np.abs(scattered_field(f, w, pts)).max() < 1e-10


def test_tiny_cylinder_scatters_weakly():
    lam = 780.5e-9
    f = FiberSpec(radius=lam / 1000)
    w = BeamGeometry().plane_waves()[0]
    pts = np.array([[0, lam * math.cos(a), lam * math.sin(a)] for a in np.linspace(0, 6, 12)])
    assert np.abs(scattered_field(f, w, pts)).max() < 1e-3


def test_series_nonconvergence_reported(fiber):
    w = BeamGeometry().plane_waves()[0]
    with pytest.raises(SeriesConvergenceError, match="order"):
        CylinderScattering(fiber, w, tol=1e-30, max_order=20)


def test_single_beam_uniform_intensity():
    g = BeamGeometry(amplitudes=(1.0, 0.0))
    pts = np.random.default_rng(1).uniform(-2e-6, 2e-6, (50, 3))
    I = np.sum(np.abs(incident_field(g, pts)) ** 2, axis=-1)
    assert np.ptp(I) < 1e-12


def test_fringe_period_46_degrees():
    assert BeamGeometry().fringe_period == pytest.approx(1.0e-6, rel=0.01)


@given(st.floats(0.2, 2.8))
def test_bare_fringes_full_contrast_and_period(theta):
    g = BeamGeometry(theta_full=theta)
    L = LatticeField(g, None)
    assert axial_contrast(L, 0.0, 0.0) == pytest.approx(1.0, abs=1e-9)
    d = g.fringe_period
    x = np.linspace(0, 3 * d, 7)
    I = L.intensity(np.stack([x, 0 * x, 0 * x], axis=-1))
    # even samples sit on maxima spaced by d, odd ones on nodes
    assert np.allclose(I[::2], I[0], rtol=1e-9)
    assert np.allclose(I[1::2], 0, atol=1e-9)
    assert d == pytest.approx(g.wavelength / (2 * math.sin(theta / 2)), rel=1e-6)


def test_envelope_modulates_intensity():
    g = BeamGeometry(waist_x=1.5e-3, waist_y=8e-6)
    pts = np.array([[0, 0, 0], [0, 8e-6, 0.0]])
    I = np.sum(np.abs(incident_field(g, pts)) ** 2, axis=-1)
    assert I[1] / I[0] == pytest.approx(math.exp(-2), rel=1e-9)


def test_geometry_validation():
    with pytest.raises(ValueError):
        BeamGeometry(theta_full=0.0)
    with pytest.raises(ValueError):
        BeamGeometry(polarization=(0, 0, 0))
    with pytest.raises(ValueError):
        BeamGeometry.for_period(0.3e-6)
    assert BeamGeometry.for_period(1.2e-6).fringe_period == pytest.approx(1.2e-6, rel=1e-12)


def test_bare_xz_map_maxima_spacing(geom):
    d = geom.fringe_period
    m = total_intensity_map(geom, None, PlaneSpec("xz", 0.0),
                            GridSpec((-1.4 * d, 1.4 * d), (-0.05e-6, 0.05e-6), 10e-9))
    assert m.intensity.max() == pytest.approx(1.0)
    mx = sorted(find_intensity_maxima(m, region=lambda u, v: np.abs(v) < 1e-9),
                key=lambda q: q.position[0])
    xs = np.array([q.position[0] for q in mx])
    assert np.allclose(np.diff(xs), d, rtol=1e-3)


def test_grid_resolution_precondition(geom):
    with pytest.raises(ValueError):
        total_intensity_map(geom, None, grid=GridSpec(step=50e-9))


def test_plane_validation():
    with pytest.raises(ValueError):
        PlaneSpec("xy")


@pytest.fixture(scope="module")
def yz_map(fiber, geom, lattice):
    return total_intensity_map(geom, fiber, PlaneSpec("yz", 0.0), GridSpec(step=10e-9),
                               sampler=lattice)


def test_map_normalized_and_masked(yz_map):
    I = yz_map.intensity[~yz_map.mask]
    assert I.max() == pytest.approx(1.0)
    assert I.min() >= 0


def test_map_mirror_symmetric_in_y(yz_map):
    I = yz_map.intensity
    assert np.max(np.abs(I - I[::-1, :])) < 1e-8


def test_nearest_maxima_above_fiber(yz_map):
    mx = find_intensity_maxima(yz_map, region=lambda u, v: (np.abs(u) < 0.15e-6) & (v > 0))
    assert mx[0].surface_distance == pytest.approx(220e-9, abs=30e-9)
    assert mx[1].surface_distance == pytest.approx(650e-9, abs=80e-9)


def test_empty_region_gives_no_maxima(yz_map):
    assert find_intensity_maxima(yz_map, region=lambda u, v: u > 1.0) == []


def test_axial_contrast_above_fiber(lattice):
    from fiberlattice.trapmodel import nearest_intensity_maximum
    p = nearest_intensity_maximum(lattice)
    assert abs(p[0]) < 5e-9
    assert axial_contrast(lattice, p[1], p[2]) > 0.95
