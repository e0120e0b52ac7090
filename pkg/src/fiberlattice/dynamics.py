"""Classical Monte Carlo of atoms in a modulated nanofiber lattice site.

Both beams share the axial wavenumber magnitude h, so the total field is
F1(y, z) exp(ihx) + F2(y, z) exp(-ihx) exactly and the intensity is

    I = P(y, z) + Qr(y, z) cos(2hx) - Qi(y, z) sin(2hx),

with P = |F1|^2 + |F2|^2 and Qr + i Qi = 2 F1 . conj(F2). The three maps are
tabulated on a (y, z) grid and interpolated with cubic B-splines, which gives
a C2 potential and exact gradients for the integrator.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import ndimage

from .fitkit import DataSeries
from .quantities import kB, mK
from .trapmodel import SURFACE_CONTACT, TrapPotential, TrapSite, characterize_site

log = logging.getLogger(__name__)


class PreconditionError(ValueError):
    pass


@dataclass
class AtomState:
    position: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class EnsembleConfig:
    count: int = 500
    temperature: float = 30e-6
    seed: int = 0
    site_index: int = 0
    envelope_waist: float = 0.0      # m; > 0 spreads site depths over a Gaussian envelope
    envelope_extent: float = 1e-3    # m; axial length of the illuminated region

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one atom")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.envelope_waist < 0 or self.envelope_extent <= 0:
            raise ValueError("envelope waist must be >= 0 and extent > 0")


@dataclass(frozen=True)
class ModulationSpec:
    frequency: float = 0.0
    epsilon: float = 0.03
    duration: float = 20e-3
    distortion: float = 0.0    # second-harmonic amplitude as a fraction of epsilon
    phase: float = 0.0

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise ValueError("modulation depth must lie in [0, 1)")

    def factor(self, t):
        w = 2 * np.pi * self.frequency
        return 1 + self.epsilon * (np.sin(w * t + self.phase)
                                   + self.distortion * np.sin(2 * (w * t + self.phase)))


# ---------------------------------------------------------------- potentials



# no nnan/ninf: loss detection relies on non-finite energies
_FM = {"contract", "reassoc", "nsz", "arcp", "afn"}


@numba.njit(cache=True, inline="always", fastmath=_FM)
def _w4(t):
    s = 1.0 - t
    t2 = t * t
    t3 = t2 * t
    return (s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0)


@numba.njit(cache=True, inline="always", fastmath=_FM)
def _d4(t):
    s = 1.0 - t
    t2 = t * t
    return -0.5 * s * s, 0.5 * (3.0 * t2 - 4.0 * t), 0.5 * (-3.0 * t2 + 2.0 * t + 1.0), 0.5 * t2


@numba.njit(cache=True, inline="always", fastmath=_FM)
def _row(c, i, j, w0, w1, w2, w3):
    return w0 * c[i, j - 1] + w1 * c[i, j] + w2 * c[i, j + 1] + w3 * c[i, j + 2]


@numba.njit(cache=True, inline="always", fastmath=_FM)
def _patch(c, iu, iv, a, e, b, f):
    """Value and (u, v) derivatives of one spline map over the 4x4 patch at (iu, iv)."""
    r0 = _row(c, iu - 1, iv, b[0], b[1], b[2], b[3])
    r1 = _row(c, iu, iv, b[0], b[1], b[2], b[3])
    r2 = _row(c, iu + 1, iv, b[0], b[1], b[2], b[3])
    r3 = _row(c, iu + 2, iv, b[0], b[1], b[2], b[3])
    q0 = _row(c, iu - 1, iv, f[0], f[1], f[2], f[3])
    q1 = _row(c, iu, iv, f[0], f[1], f[2], f[3])
    q2 = _row(c, iu + 1, iv, f[0], f[1], f[2], f[3])
    q3 = _row(c, iu + 2, iv, f[0], f[1], f[2], f[3])
    return (a[0] * r0 + a[1] * r1 + a[2] * r2 + a[3] * r3,
            e[0] * r0 + e[1] * r1 + e[2] * r2 + e[3] * r3,
            a[0] * q0 + a[1] * q1 + a[2] * q2 + a[3] * q3)


@numba.njit(cache=True, inline="always", fastmath=_FM)
def _eval_harmonic(x, y, z, c2, s2, s, par, coef):
    """Separable harmonic well; par: [x0, y0, z0, kx, ky, kz] (J/m^2)."""
    dx = x - par[0]
    dy = y - par[1]
    dz = z - par[2]
    U = 0.5 * s * (par[3] * dx * dx + par[4] * dy * dy + par[5] * dz * dz)
    return U, -s * par[3] * dx, -s * par[4] * dy, -s * par[5] * dz


@numba.njit(cache=True, inline="always", fastmath=_FM)
def _eval_spline(x, y, z, c2, s2, s, par, coef):
    """Potential energy and force at one point; lattice term scaled by s.

    c2, s2 are cos and sin of k2 * x, supplied by the caller.
    par: [y0, z0, step, ny, nz, k2, U0, C3, R, 1/I_ref]
    """
    inv_step = 1.0 / par[2]
    u = (y - par[0]) * inv_step
    v = (z - par[1]) * inv_step
    inside = u >= 1.0 and v >= 1.0 and u < par[3] - 3.0 and v < par[4] - 3.0
    if not inside:
        # evaluate a valid patch and flag the result (single exit keeps this fast)
        u = 1.0
        v = 1.0
    iu = int(u)
    iv = int(v)
    a = _w4(u - iu)
    e = _d4(u - iu)
    b = _w4(v - iv)
    f = _d4(v - iv)
    p, py, pz = _patch(coef[0], iu, iv, a, e, b, f)
    qr, qry, qrz = _patch(coef[1], iu, iv, a, e, b, f)
    qi, qiy, qiz = _patch(coef[2], iu, iv, a, e, b, f)
    k2 = par[5]
    amp = -s * par[6] * par[9]
    U = amp * (p + qr * c2 - qi * s2)
    Fx = amp * k2 * (qr * s2 + qi * c2)
    Fy = -amp * inv_step * (py + qry * c2 - qiy * s2)
    Fz = -amp * inv_step * (pz + qrz * c2 - qiz * s2)
    C3 = par[7]
    r = math.sqrt(y * y + z * z)
    d = r - par[8]
    inv_d = 1.0 / max(d, 1e-12)
    inv_d3 = inv_d * inv_d * inv_d
    U -= C3 * inv_d3
    g = 3.0 * C3 * inv_d3 * inv_d / r      # (dU/dd) / r
    Fy -= g * y
    Fz -= g * z
    if d <= 0.0 and C3 > 0.0:
        U = -np.inf
    if not inside:
        U = np.nan
    return U, Fx, Fy, Fz




@numba.njit(cache=True, inline="always", fastmath=_FM)
def _rotate(c, s, d):
    """(cos, sin)(theta + d) from (cos, sin)(theta); |d| < 0.05 keeps the error < 1e-13."""
    d2 = d * d
    cd = 1.0 - d2 * (0.5 - d2 * (1.0 / 24.0 - d2 / 720.0))
    sd = d * (1.0 - d2 * (1.0 / 6.0 - d2 * (1.0 / 120.0 - d2 / 5040.0)))
    return c * cd - s * sd, s * cd + c * sd


@numba.njit(cache=True, fastmath=_FM, nogil=True)
def _propagate(evaluate, k2, par, coef, mass, dt, scale, pos, vel, bounds, R, contact,
               record_every, energies, energy_cut, qf, block=8):
    """Velocity Verlet for each atom; returns the step index of loss (-1 if kept).

    bounds: [x_lo, x_hi, y_lo, y_hi, d_lo, d_hi] escape box (+-inf disables).
    energy_cut: [E_lat, E_other, E_max]; an atom is lost once its total energy
    exceeds s q * E_lat + E_other + q * E_max (s is the lattice scale at that
    step, q = qf[atom] its relative site depth).
    Atoms are advanced in interleaved blocks so their independent update chains
    overlap; each atom's arithmetic does not depend on the blocking. The
    lattice phase cos/sin(k2 x) is advanced by small rotations and recomputed
    exactly every 64 steps.
    """
    n_atoms = pos.shape[0]
    nsteps = scale.shape[0] - 1
    lost = np.full(n_atoms, -1, dtype=np.int64)
    h = 0.5 * dt / mass
    n_rec = energies.shape[1]
    st = np.empty((block, 10))
    for a0 in range(0, n_atoms, block):
        nb = min(block, n_atoms - a0)
        for j in range(nb):
            a = a0 + j
            x, y, z = pos[a, 0], pos[a, 1], pos[a, 2]
            c2 = math.cos(k2 * x)
            s2 = math.sin(k2 * x)
            U, fx, fy, fz = evaluate(x, y, z, c2, s2, scale[0] * qf[a], par, coef)
            st[j, 0], st[j, 1], st[j, 2] = x, y, z
            st[j, 3], st[j, 4], st[j, 5] = vel[a, 0], vel[a, 1], vel[a, 2]
            st[j, 6], st[j, 7], st[j, 8] = fx, fy, fz
            st[j, 9] = c2
            if record_every > 0:
                energies[a, 0] = U + 0.5 * mass * (st[j, 3] ** 2 + st[j, 4] ** 2 + st[j, 5] ** 2)
            if not math.isfinite(U):
                lost[a] = 0
        sn = np.empty(block)
        for j in range(nb):
            sn[j] = math.sin(k2 * st[j, 0])
        alive = nb
        for a in range(a0, a0 + nb):
            if lost[a] >= 0:
                alive -= 1
        for n in range(nsteps):
            if alive == 0:
                break
            sc = scale[n + 1]
            exact = (n & 63) == 63
            rec = record_every > 0 and (n + 1) % record_every == 0 and (n + 1) // record_every < n_rec
            for j in range(nb):
                a = a0 + j
                if lost[a] >= 0:
                    continue
                vx = st[j, 3] + h * st[j, 6]
                vy = st[j, 4] + h * st[j, 7]
                vz = st[j, 5] + h * st[j, 8]
                dx = dt * vx
                x = st[j, 0] + dx
                y = st[j, 1] + dt * vy
                z = st[j, 2] + dt * vz
                dph = k2 * dx
                if exact or abs(dph) > 0.05:
                    c2 = math.cos(k2 * x)
                    s2 = math.sin(k2 * x)
                else:
                    c2, s2 = _rotate(st[j, 9], sn[j], dph)
                q = qf[a]
                U, fx, fy, fz = evaluate(x, y, z, c2, s2, sc * q, par, coef)
                e_lim = sc * q * energy_cut[0] + energy_cut[1] + q * energy_cut[2]
                vx += h * fx
                vy += h * fy
                vz += h * fz
                st[j, 0], st[j, 1], st[j, 2] = x, y, z
                st[j, 3], st[j, 4], st[j, 5] = vx, vy, vz
                st[j, 6], st[j, 7], st[j, 8] = fx, fy, fz
                st[j, 9] = c2
                sn[j] = s2
                d = math.sqrt(y * y + z * z) - R
                E = U + 0.5 * mass * (vx * vx + vy * vy + vz * vz)
                if (not math.isfinite(U) or E > e_lim or d < contact or x < bounds[0] or x > bounds[1]
                        or y < bounds[2] or y > bounds[3] or d < bounds[4] or d > bounds[5]):
                    lost[a] = n + 1
                    alive -= 1
                    continue
                if rec:
                    energies[a, (n + 1) // record_every] = E
        for j in range(nb):
            a = a0 + j
            pos[a, 0], pos[a, 1], pos[a, 2] = st[j, 0], st[j, 1], st[j, 2]
            vel[a, 0], vel[a, 1], vel[a, 2] = st[j, 3], st[j, 4], st[j, 5]
    return lost


@numba.njit(cache=True)
def _eval_many(evaluate, k2, par, coef, s, pts):
    out = np.empty((pts.shape[0], 4))
    for i in range(pts.shape[0]):
        x = pts[i, 0]
        U, fx, fy, fz = evaluate(x, pts[i, 1], pts[i, 2], math.cos(k2 * x), math.sin(k2 * x),
                                 s, par, coef)
        out[i, 0], out[i, 1], out[i, 2], out[i, 3] = U, fx, fy, fz
    return out


class _Sampler:
    evaluate = None
    k2: float = 0.0
    par: np.ndarray
    coef: np.ndarray
    radius: float = 0.0
    mass: float

    def energy_force(self, points, scale=1.0):
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        return _eval_many(self.evaluate, self.k2, self.par, self.coef, float(scale), pts)

    def __call__(self, points, scale=1.0):
        return self.energy_force(points, scale)[:, 0]


class HarmonicSampler(_Sampler):
    """Separable harmonic well, frequencies in Hz, centred at ``center``."""

    def __init__(self, frequencies, mass, center=(0.0, 0.0, 0.0)):
        self.evaluate = _eval_harmonic
        self.k2 = 0.0
        k = mass * (2 * np.pi * np.asarray(frequencies, dtype=float)) ** 2
        self.par = np.array([*center, *k], dtype=float)
        self.coef = np.zeros((3, 1, 1))
        self.mass = mass
        self.radius = 0.0
        self.frequencies = np.asarray(frequencies, dtype=float)


class SplineLattice(_Sampler):
    """Fast interpolated version of a TrapPotential for trajectory integration."""

    def __init__(self, potential: TrapPotential, y_range=(-1.0e-6, 1.0e-6),
                 z_range=(-0.35e-6, None), step=5e-9):
        field = potential.field
        if len(field.solutions) != 2 or field.geom.waist_x or field.geom.waist_y:
            raise ValueError("spline lattice needs a two-beam plane-wave field with a fiber")
        R = field.fiber.radius
        z_hi = z_range[1] if z_range[1] is not None else R + 0.9e-6
        ny = int(round((y_range[1] - y_range[0]) / step)) + 1
        nz = int(round((z_hi - z_range[0]) / step)) + 1
        y = y_range[0] + step * np.arange(ny)
        z = z_range[0] + step * np.arange(nz)
        Y, Z = np.meshgrid(y, z, indexing="ij")
        r = np.hypot(Y, Z)
        # continue the exterior solution a little way inside the fiber so the
        # spline sees smooth data; deep interior points are clamped in radius
        rc = np.maximum(r, 0.8 * R)
        phi = np.arctan2(Z, Y)
        pts = np.stack([np.zeros_like(Y), rc * np.cos(phi), rc * np.sin(phi)], axis=-1).reshape(-1, 3)
        F = []
        for wave, sol in zip(field.waves, field.solutions):
            F.append(wave.field(pts) + sol.field(pts))
        F1, F2 = F
        P = np.sum(np.abs(F1) ** 2 + np.abs(F2) ** 2, axis=-1)
        Q = 2 * np.sum(F1 * np.conj(F2), axis=-1)
        maps = np.stack([P, Q.real, Q.imag]).reshape(3, ny, nz)
        self.coef = np.ascontiguousarray(np.stack([ndimage.spline_filter(m, order=3) for m in maps]))
        h = field.solutions[0].h
        cfg = potential.config
        self.evaluate = _eval_spline
        self.k2 = 2 * abs(h)
        self.par = np.array([y[0], z[0], step, ny, nz, 2 * abs(h), cfg.depth, cfg.C3, R,
                             1 / potential.I_ref], dtype=float)
        self.radius = R
        self.mass = cfg.species.mass
        self.potential = potential
        self.grid = (y, z)

    def with_depth(self, depth, C3=None):
        new = object.__new__(SplineLattice)
        new.__dict__.update(self.__dict__)
        new.par = self.par.copy()
        new.par[6] = depth
        if C3 is not None:
            new.par[7] = C3
        return new

    @property
    def depth(self):
        return float(self.par[6])


# ---------------------------------------------------------------- sampling

def _atom_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def sample_thermal(site: TrapSite, T, seed, mass, index=0, depth_factor=1.0) -> AtomState:
    """Classical harmonic Boltzmann draw around a characterized site.

    ``depth_factor`` is the site depth relative to the characterized one; the
    harmonic frequencies scale with its square root.
    """
    if not site.stable:
        raise PreconditionError("cannot sample an unstable site")
    if T < 0:
        raise ValueError("negative temperature")
    if site.depth_eff < np.inf and kB * T >= site.depth_eff:
        log.warning("kB T exceeds the effective depth of the site")
    pos = np.array(site.position, dtype=float)
    vel = np.zeros(3)
    if T == 0:
        return AtomState(pos, vel)
    rng = _atom_rng(seed, index)
    freqs = site.frequencies
    axes = np.array(site.axes) if site.axes else np.eye(3)
    sig = np.sqrt(kB * T / mass) / (2 * np.pi * freqs * math.sqrt(depth_factor))
    pos = pos + (rng.standard_normal(3) * sig) @ axes
    vel = rng.standard_normal(3) * math.sqrt(kB * T / mass)
    return AtomState(pos, vel)


def depth_factors(ensemble: EnsembleConfig):
    """Relative depth of each atom's site: all ones, or exp(-2 x^2 / w^2) for
    sites spread uniformly over the illuminated length."""
    if ensemble.envelope_waist == 0:
        return np.ones(ensemble.count)
    rng = np.random.default_rng(np.random.SeedSequence([int(ensemble.seed), 1 << 20]))
    x = (rng.random(ensemble.count) - 0.5) * ensemble.envelope_extent
    return np.exp(-2 * x**2 / ensemble.envelope_waist**2)


def sample_ensemble(site: TrapSite, ensemble: EnsembleConfig, mass):
    q = depth_factors(ensemble)
    states = [sample_thermal(site, ensemble.temperature, ensemble.seed, mass, i, q[i])
              for i in range(ensemble.count)]
    return (np.array([s.position for s in states]), np.array([s.velocity for s in states]))


# ---------------------------------------------------------------- propagation

@dataclass
class Trajectory:
    position: np.ndarray        # final positions (N, 3)
    velocity: np.ndarray
    lost_step: np.ndarray       # -1 where retained
    dt: float
    energies: np.ndarray | None = None   # (N, n_records) when recorded
    record_every: int = 0

    @property
    def lost(self):
        return self.lost_step >= 0

    def energy_times(self):
        n = self.energies.shape[1]
        return np.arange(n) * self.record_every * self.dt


def check_timestep(dt, f_max):
    if dt > 1 / (20 * f_max) * (1 + 1e-12):
        raise PreconditionError(f"dt={dt:.3g} s exceeds 1/(20 f_max) = {1 / (20 * f_max):.3g} s")


def modulation_schedule(mod: ModulationSpec, dt, ramp_to=None, ramp_time=1e-3):
    """Lattice scale factor at every step: modulation stage then optional linear ramp."""
    n_mod = int(round(mod.duration / dt))
    t = np.arange(n_mod + 1) * dt
    s = mod.factor(t) if mod.epsilon > 0 else np.ones_like(t)
    if ramp_to is not None and ramp_time > 0:
        n_r = int(round(ramp_time / dt))
        # linear from the last modulation value to exactly ramp_to
        ramp = s[-1] + (ramp_to - s[-1]) * np.arange(1, n_r + 1) / n_r
        s = np.concatenate([s, ramp])
    return np.ascontiguousarray(s)


def propagate(positions, velocities, sampler: _Sampler, mod: ModulationSpec, dt, t_end=None,
              f_max=None, bounds=None, contact=SURFACE_CONTACT, record_every=0, scale=None,
              energy_cut=None, depth_factor=None):
    """Integrate an ensemble (or one state) under the modulated potential.

    The lattice term is multiplied by mod.factor(t); ``scale`` overrides the
    schedule entirely. Atoms are flagged lost on surface contact, on leaving
    the ``bounds`` box, on entering a region outside the tabulated map, or
    (with ``energy_cut`` = (E_lat, E_other, E_max)) when their energy above
    the instantaneous site energy s * E_lat + E_other exceeds E_max.
    ``depth_factor`` (per atom) multiplies the lattice term and E_max.
    """
    if isinstance(positions, AtomState):
        positions, velocities = positions.position, positions.velocity
    pos = np.array(np.atleast_2d(positions), dtype=float)
    vel = np.array(np.atleast_2d(velocities), dtype=float)
    if f_max is not None:
        check_timestep(dt, f_max)
    if scale is None:
        if t_end is not None:
            mod = replace(mod, duration=t_end)
        scale = modulation_schedule(mod, dt)
    scale = np.ascontiguousarray(scale, dtype=float)
    b = np.array(bounds if bounds is not None else [-np.inf, np.inf] * 3, dtype=float)
    qf = np.ones(pos.shape[0]) if depth_factor is None else np.array(
        np.broadcast_to(depth_factor, pos.shape[:1]), dtype=float)
    n_rec = (scale.size - 1) // record_every + 1 if record_every > 0 else 1
    energies = np.zeros((pos.shape[0], n_rec))
    lost = _propagate(sampler.evaluate, sampler.k2, sampler.par, sampler.coef, sampler.mass, float(dt), scale,
                      pos, vel, b, float(sampler.radius),
                      float(contact if sampler.radius > 0 else -np.inf),
                      int(record_every), energies,
                      np.array(energy_cut if energy_cut is not None else [0.0, 0.0, np.inf], dtype=float),
                      qf)
    return Trajectory(pos, vel, lost, dt, energies if record_every > 0 else None, record_every)


# ---------------------------------------------------------------- loss spectra

def escape_box(potential: TrapPotential, site: TrapSite, lateral=0.5e-6):
    """Bounds of the site basin: next axial nodes, +-lateral in y, surface
    contact and the intensity minimum beyond the site."""
    p = np.array(site.position)
    period = potential.config.period or potential.field.geom.fringe_period
    d_site = np.hypot(p[1], p[2]) - potential.radius
    d = np.linspace(d_site, d_site + 0.6e-6, 601)
    u = np.array([0, p[1], p[2]]) / np.hypot(p[1], p[2])
    pts = (p[None, :] + (d - d_site)[:, None] * u[None, :])
    I = potential.relative_intensity(pts)
    i_min = int(np.argmin(I))
    return [p[0] - period / 2, p[0] + period / 2, p[1] - lateral, p[1] + lateral,
            SURFACE_CONTACT, float(d[i_min])]


@dataclass
class LossSpectrumResult:
    series: DataSeries
    baseline: float
    dt: float
    metadata: dict = field(default_factory=dict)


def site_energy_split(sampler: _Sampler, site: TrapSite):
    """(lattice part, remaining part) of the potential energy at the site."""
    p = np.array([site.position], dtype=float)
    E1 = float(sampler(p, 1.0)[0])
    E0 = float(sampler(p, 0.0)[0])
    return E1 - E0, E0


def loss_spectrum(ensemble: EnsembleConfig, site: TrapSite, sampler: SplineLattice,
                  template: ModulationSpec, f_grid, dt=None, criterion="energy",
                  readout_depth=mK(0.1), ramp_time=1e-3, bounds=None,
                  progress=None, threads=1) -> LossSpectrumResult:
    """Fraction of atoms retained after modulation at each f_mod.

    The same initial ensemble is used at every frequency. During modulation an
    atom is lost on surface contact, on leaving the site basin (escape_box,
    or ``bounds``) and, with criterion="energy", as soon as its energy above
    the instantaneous site energy exceeds the site's U_eff. The lattice is then
    ramped linearly to ``readout_depth`` over ``ramp_time``; atoms that
    physically leave the basin during the ramp are also lost.
    """
    if criterion not in ("energy", "escape"):
        raise ValueError(f"unknown loss criterion {criterion!r}")
    f_grid = np.asarray(f_grid, dtype=float)
    f_max = max(site.f_rad, site.f_ax, site.f_az)
    dt = dt if dt is not None else 1 / (40 * site.f_rad)
    check_timestep(dt, f_max)
    if f_grid.min() > 0.5 * site.f_ax * 1.001 or f_grid.max() < 3 * site.f_ax * 0.999:
        log.warning("f_grid does not cover [0.5, 3] f_ax")
    pos0, vel0 = sample_ensemble(site, ensemble, sampler.mass)
    q = depth_factors(ensemble)
    if bounds is None:
        bounds = escape_box(sampler.potential, site)
    cut = None
    if criterion == "energy":
        cut = (*site_energy_split(sampler, site), site.depth_eff)
    ramp_to = None if readout_depth is None else readout_depth / sampler.depth
    n_mod = int(round(template.duration / dt))

    def one(f):
        mod = replace(template, frequency=float(f))
        scale = modulation_schedule(mod, dt, ramp_to, ramp_time)
        tr = propagate(pos0, vel0, sampler, mod, dt, bounds=bounds, scale=scale[:n_mod + 1],
                       energy_cut=cut, depth_factor=q)
        kept = ~tr.lost
        if ramp_to is not None and kept.any():
            idx = np.nonzero(kept)[0]
            tr2 = propagate(tr.position[idx], tr.velocity[idx], sampler, mod, dt, bounds=bounds,
                            scale=scale[n_mod:], depth_factor=q[idx])
            kept[idx[tr2.lost]] = False
        return kept.mean()

    # frequencies are independent and the kernel releases the GIL
    surv = []
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            for i, (f, p) in enumerate(zip(f_grid, pool.map(one, f_grid))):
                surv.append(p)
                if progress:
                    progress(i, f, p)
    else:
        for i, f in enumerate(f_grid):
            surv.append(one(f))
            if progress:
                progress(i, f, surv[-1])
    err = [max(math.sqrt(p * (1 - p) / ensemble.count), 0.5 / ensemble.count) for p in surv]
    series = DataSeries(f_grid, np.array(surv), np.array(err), x_label="f_mod [Hz]",
                        y_label="survival")
    return LossSpectrumResult(series, float(np.median(surv)), dt,
                              {"criterion": criterion, "readout_depth_J": readout_depth,
                               "ramp_time_s": ramp_time, "bounds": [float(b) for b in bounds],
                               "atoms": ensemble.count, "temperature_K": ensemble.temperature,
                               "envelope_waist_m": ensemble.envelope_waist})
