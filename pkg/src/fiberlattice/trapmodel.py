"""Trap potential near the fiber: lattice light shift plus surface attraction.

The lattice term is -U0 * I / I_ref, where I_ref is the intensity of the
maximum nearest to the fiber on the illuminated side, so U0 is the depth there.
The surface term is the planar near-field van der Waals form -C3 / d^3.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .fieldsim import LatticeField
from .quantities import RB85, AtomSpecies, hbar, kB, mK

log = logging.getLogger(__name__)

# Rb(5S) / fused silica, h x 1.2 kHz um^3 (typical ground-state alkali-silica value).
C3_RB_SILICA = 6.62607015e-34 * 1.2e3 * 1e-18
SURFACE_CONTACT = 10e-9


@dataclass(frozen=True)
class TrapConfig:
    depth: float = mK(0.5)                          # U0, J
    detuning: float = -2 * math.pi * 130e9          # rad/s, negative = red
    C3: float = C3_RB_SILICA                        # J m^3
    period: Optional[float] = None                  # d_lat; None = from beam geometry
    species: AtomSpecies = RB85

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("lattice depth must be non-negative")
        if self.C3 < 0:
            raise ValueError("C3 must be non-negative")

    def with_depth(self, depth):
        return replace(self, depth=depth)


def lattice_potential(intensity_rel, config: TrapConfig):
    return -config.depth * np.asarray(intensity_rel, dtype=float)


def vdw_potential(C3, d):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("surface distance must be positive")
    return -C3 / d**3


def axial_frequency(period, depth, mass=RB85.mass):
    """Harmonic axial frequency (1/d) sqrt(U0 / 2M) of a sinusoidal lattice."""
    if not (np.all(np.asarray(period) > 0) and np.all(np.asarray(depth) >= 0) and mass > 0):
        raise ValueError("period, depth and mass must be positive")
    return np.sqrt(depth / (2 * mass)) / period


def sigma_axial(T, depth, period):
    """Thermal rms axial spread d sqrt(kB T / 2 U0) / pi."""
    if T < 0 or depth <= 0 or period <= 0:
        raise ValueError("need T >= 0, depth > 0, period > 0")
    if kB * T > 0.2 * depth:
        log.warning("kB T = %.3g U0: harmonic spread estimate is unreliable", kB * T / depth)
    return period * math.sqrt(kB * T / (2 * depth)) / math.pi


def debye_waller(k, sigma):
    if k < 0 or sigma < 0:
        raise ValueError("k and sigma must be non-negative")
    return math.exp(-4 * k**2 * sigma**2)


def depth_for_debye_waller(target, T, period, k):
    """Lattice depth U0 at which exp(-4 k^2 sigma_ax^2) equals ``target``."""
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    # sigma^2 = d^2 kB T / (2 U0 pi^2)
    sigma2 = -math.log(target) / (4 * k**2)
    return period**2 * kB * T / (2 * math.pi**2 * sigma2)


def scattering_rate(depth, detuning, gamma, convention="two_level"):
    """Far-detuned photon scattering rate at the potential minimum.

    ``two_level``: Gamma_sc = Gamma0 U0 / (hbar |Delta|).
    """
    if detuning == 0:
        raise ValueError("zero detuning")
    if convention != "two_level":
        raise ValueError(f"unknown convention {convention!r}")
    return gamma * depth / (hbar * abs(detuning))


def recoil_heating_rate(rate, recoil_energy, energy_per_scatter=2.0):
    """Heating in K/s: each scattered photon deposits energy_per_scatter * E_rec."""
    return energy_per_scatter * recoil_energy * rate / kB


class TrapPotential:
    """Total potential sampler built on a LatticeField.

    ``reference`` is the position of the intensity maximum defining I_ref; by
    default the maximum nearest the fiber on the +z side at x = 0.
    """

    def __init__(self, field: LatticeField, config: TrapConfig, reference=None):
        self.field = field
        self.config = config
        self.radius = field.fiber.radius if field.fiber is not None else 0.0
        if reference is None:
            reference = nearest_intensity_maximum(field, side=+1)
        self.reference = np.asarray(reference, dtype=float)
        self.I_ref = float(field.intensity(self.reference))

    def with_config(self, config: TrapConfig):
        new = object.__new__(TrapPotential)
        new.__dict__.update(self.__dict__)
        new.config = config
        return new

    def surface_distance(self, points):
        pts = np.asarray(points, dtype=float)
        return np.hypot(pts[..., 1], pts[..., 2]) - self.radius

    def relative_intensity(self, points):
        return self.field.intensity(points) / self.I_ref

    def lattice(self, points):
        return lattice_potential(self.relative_intensity(points), self.config)

    def vdw(self, points):
        if self.field.fiber is None or self.config.C3 == 0:
            return np.zeros(np.asarray(points).shape[:-1])
        return vdw_potential(self.config.C3, self.surface_distance(points))

    def __call__(self, points):
        return self.lattice(points) + self.vdw(points)

    total = __call__


def total_potential(potential: TrapPotential, point):
    p = np.asarray(point, dtype=float)
    if potential.field.fiber is not None and np.any(potential.surface_distance(p) <= 0):
        raise ValueError("point inside the fiber")
    return potential(p)


def nearest_intensity_maximum(field: LatticeField, side=+1, x=0.0, window=2e-6, step=1e-9):
    """Refined 3D intensity maximum nearest the fiber along the +-z axis."""
    R = field.fiber.radius if field.fiber is not None else 0.0
    d = np.arange(step, window, step)
    z = side * (R + d)
    pts = np.stack([np.full_like(z, x), np.zeros_like(z), z], axis=-1)
    I = field.intensity(pts)
    idx = np.nonzero((I[1:-1] > I[:-2]) & (I[1:-1] >= I[2:]))[0]
    if idx.size == 0:
        raise ValueError("no intensity maximum found on the axis cut")
    seed = pts[idx[0] + 1]
    return newton_refine(lambda p: -field.intensity(p), seed)


def _fd_grad_hess(f, p, step):
    n = p.size
    E = np.eye(n) * step
    # all stencil points in one vectorized call
    stencil = [p]
    for i in range(n):
        stencil += [p + E[i], p - E[i]]
    for i in range(n):
        for j in range(i + 1, n):
            stencil += [p + E[i] + E[j], p + E[i] - E[j], p - E[i] + E[j], p - E[i] - E[j]]
    vals = f(np.array(stencil))
    f0 = vals[0]
    g = np.empty(n)
    H = np.empty((n, n))
    for i in range(n):
        fp, fm = vals[1 + 2 * i], vals[2 + 2 * i]
        g[i] = (fp - fm) / (2 * step)
        H[i, i] = (fp - 2 * f0 + fm) / step**2
    k = 1 + 2 * n
    for i in range(n):
        for j in range(i + 1, n):
            pp, pm, mp, mm = vals[k:k + 4]
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * step**2)
            k += 4
    return f0, g, H


def newton_refine(f, seed, step=2e-9, clamp=5e-9, tol=1e-13, max_iter=60):
    """Damped Newton descent on f with finite-difference derivatives.

    Steps are clamped to ``clamp``; where the Hessian is not positive definite
    a clamped gradient step is taken instead.
    """
    p = np.asarray(seed, dtype=float).copy()
    for _ in range(max_iter):
        f0, g, H = _fd_grad_hess(f, p, step)
        try:
            w = np.linalg.eigvalsh(H)
            dp = -np.linalg.solve(H, g) if w.min() > 0 else -g / np.abs(w).max()
        except np.linalg.LinAlgError:
            dp = -g * clamp / (np.linalg.norm(g) + 1e-300)
        nrm = np.linalg.norm(dp)
        if nrm > clamp:
            dp *= clamp / nrm
        # backtrack so the objective never increases
        t = 1.0
        while t > 1e-4 and f((p + t * dp)[None])[0] > f0:
            t *= 0.5
        p = p + t * dp
        if np.linalg.norm(t * dp) < tol:
            break
    return p


@dataclass(frozen=True)
class TrapSite:
    position: tuple
    energy: float            # potential at the minimum, J
    depth_eff: float         # U_eff, J
    f_ax: float
    f_rad: float
    f_az: float
    stable: bool
    axes: tuple = ()         # principal axes (ax, rad, az) as 3-vectors
    barrier_path: str = ""

    @property
    def frequencies(self):
        return np.array([self.f_ax, self.f_rad, self.f_az])

    def report(self):
        return {
            "position_m": list(self.position),
            "surface_distance_nm": None,
            "U_eff_mK": self.depth_eff / kB * 1e3,
            "f_ax_Hz": self.f_ax,
            "f_rad_Hz": self.f_rad,
            "f_az_Hz": self.f_az,
            "stable": self.stable,
            "escape": self.barrier_path,
        }


def hessian_frequencies(H, mass):
    w, v = np.linalg.eigh(H)
    f = np.sqrt(np.clip(w, 0, None) / mass) / (2 * np.pi)
    return w, v, f


def characterize_site(potential, config: TrapConfig, seed, radius=None,
                      hessian_step=2e-9, barrier=True) -> TrapSite:
    """Refine a potential minimum and report its harmonic frequencies and U_eff.

    ``potential`` is any callable (N, 3) -> (N,) energies; with a TrapPotential
    the escape barrier is searched over the fiber cross-section and along x.
    """
    mass = config.species.mass
    f = potential
    try:
        site = newton_refine(f, seed, step=hessian_step)
        U_site, _, H = _fd_grad_hess(f, site, hessian_step)
    except ValueError:
        # the descent ran into the surface: no local minimum near the seed
        nan = float("nan")
        return TrapSite(tuple(np.asarray(seed, float)), nan, 0.0, nan, nan, nan, False,
                        (), "surface")
    w, v, freqs = hessian_frequencies(H, mass)
    pd = bool(w.min() > 0)
    if radius is None:
        radius = getattr(potential, "radius", 0.0)
    # principal axes: axial = most along x, radial = most along e_r, rest azimuthal
    r_hat = np.array([0.0, site[1], site[2]])
    r_hat = r_hat / np.linalg.norm(r_hat) if np.linalg.norm(r_hat) > 0 else np.array([0, 0, 1.0])
    i_ax = int(np.argmax(np.abs(v[0])))
    rest = [i for i in range(3) if i != i_ax]
    i_rad = max(rest, key=lambda i: abs(v[:, i] @ r_hat))
    i_az = [i for i in rest if i != i_rad][0]
    depth_eff, path = (np.inf, "")
    if barrier and isinstance(potential, TrapPotential):
        depth_eff, path = escape_barrier(potential, site)
    stable = pd and depth_eff > 0
    return TrapSite(tuple(site), float(U_site), float(depth_eff),
                    float(freqs[i_ax]), float(freqs[i_rad]), float(freqs[i_az]),
                    stable, (tuple(v[:, i_ax]), tuple(v[:, i_rad]), tuple(v[:, i_az])), path)


def radial_cut(potential: TrapPotential, d, x=0.0, side=+1):
    """Lattice, vdW and total potential along the +-z axis at surface distances d."""
    d = np.asarray(d, dtype=float)
    z = side * (potential.radius + d)
    pts = np.stack([np.full_like(z, x), np.zeros_like(z), z], axis=-1)
    lat = potential.lattice(pts)
    vdw = potential.vdw(pts)
    return lat, vdw, lat + vdw


def radial_barrier(potential: TrapPotential, site, step=0.5e-9):
    """Barrier height towards the surface along the ray from the fiber axis through the site.

    Returns (U_eff_radial, barrier_distance). Zero when the potential falls
    monotonically into the surface, i.e. no radial confinement.
    """
    site = np.asarray(site, dtype=float)
    r_site = np.hypot(site[1], site[2])
    u = np.array([0.0, site[1], site[2]]) / r_site
    d_site = r_site - potential.radius
    d = np.arange(SURFACE_CONTACT, d_site, step)
    pts = site[None, :] - (d_site - d)[:, None] * u[None, :]
    U = potential(pts)
    U_site = float(potential(site[None])[0])
    i = int(np.argmax(U))
    return max(float(U[i]) - U_site, 0.0), float(d[i])


def radial_threshold(potential: TrapPotential, lo=mK(0.001), hi=mK(1.0), rtol=1e-3,
                     side=+1, window=None):
    """Smallest U0 with a local radial minimum near the nearest intensity maximum.

    Existence test on the +-z axis cut: the total potential must have an
    interior local minimum between the surface-contact distance and the
    intensity maximum plus ``window``.
    """
    ref = potential.reference
    d_max = np.hypot(ref[1], ref[2]) - potential.radius
    window = window if window is not None else 0.5 * d_max
    d = np.arange(SURFACE_CONTACT, d_max + window, 0.25e-9)
    z = side * (potential.radius + d)
    pts = np.stack([np.full_like(z, ref[0]), np.zeros_like(z), z], axis=-1)
    I = potential.relative_intensity(pts)
    V = potential.vdw(pts)

    def confined(U0):
        U = -U0 * I + V
        interior = (U[1:-1] < U[:-2]) & (U[1:-1] <= U[2:])
        return bool(np.any(interior))

    if not confined(hi):
        return np.inf
    if confined(lo):
        return lo
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if confined(mid):
            hi = mid
        else:
            lo = mid
    return hi


def escape_barrier(potential: TrapPotential, site, half_width=1.0e-6, step=10e-9):
    """U_eff: lowest energy (above the site) at which an atom can leave the site.

    Three routes are tried and the lowest is returned: flooding of the
    cross-section plane through the site (sinks are the window edge and the
    surface-contact layer), a finely sampled radial ray to the surface, and the
    axial line to the next lattice node.
    """
    site = np.asarray(site, dtype=float)
    U_site = float(potential(site[None])[0])
    cands = {}
    # cross-section flooding
    y = np.arange(site[1] - half_width, site[1] + half_width + step / 2, step)
    z = np.arange(-potential.radius - 0.4e-6, site[2] + half_width + step / 2, step)
    Y, Z = np.meshgrid(y, z, indexing="ij")
    pts = np.stack([np.full_like(Y, site[0]), Y, Z], axis=-1)
    d = np.hypot(Y, Z) - potential.radius
    sink = d < SURFACE_CONTACT
    U = np.full(Y.shape, -np.inf)
    U[~sink] = potential(pts[~sink])
    sink[0, :] = sink[-1, :] = sink[:, 0] = sink[:, -1] = True
    iy = int(np.argmin(np.abs(y - site[1])))
    iz = int(np.argmin(np.abs(z - site[2])))
    lo, hi = U_site, U_site + 50 * max(potential.config.depth, 1e-30)
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        lab, _ = ndimage.label((U <= mid) | sink)
        if lab[iy, iz] != 0 and np.any(sink & (lab == lab[iy, iz])):
            hi = mid
        else:
            lo = mid
    cands["cross-section"] = hi - U_site
    # fine radial ray (resolves the near-surface vdW barrier)
    cands["radial"] = radial_barrier(potential, site)[0]
    # axial: up to the next node at half a period
    period = potential.config.period or potential.field.geom.fringe_period
    x = site[0] + np.linspace(0, period / 2, 101)
    ax_pts = np.stack([x, np.full_like(x, site[1]), np.full_like(x, site[2])], axis=-1)
    cands["axial"] = float(potential(ax_pts).max()) - U_site
    path = min(cands, key=cands.get)
    return max(cands[path], 0.0), path
