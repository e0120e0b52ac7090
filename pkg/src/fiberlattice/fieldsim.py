"""Light field of two interfering plane waves scattered by the nanofiber.

Each lattice beam is a plane wave travelling towards -z, tilted by +-theta/2
in the x-z plane; the fiber axis is x. Scattering by the infinite dielectric
cylinder is solved exactly with cylindrical harmonics at oblique incidence,
keeping the coupling between the E_x and H_x families that a nonzero axial
wavenumber produces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .cylwaves import polar, to_cartesian, transverse
from .fibermode import FiberSpec


class SeriesConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlaneWave:
    wavelength: float           # vacuum wavelength
    direction: tuple            # unit wave vector
    polarization: tuple         # complex E-field unit vector, orthogonal to direction
    amplitude: complex = 1.0

    def field(self, points, n=1.0):
        pts = np.asarray(points, dtype=float)
        k = 2 * np.pi * n / self.wavelength * np.asarray(self.direction)
        phase = np.exp(1j * (pts @ k))
        return self.amplitude * phase[..., None] * np.asarray(self.polarization, dtype=complex)

    def hfield(self, points, n=1.0):
        """Hn = Z0 H = n k_hat x E for a plane wave in a medium of index n."""
        E = self.field(points, n)
        return n * np.cross(np.asarray(self.direction, dtype=float), E)


@dataclass(frozen=True)
class BeamGeometry:
    wavelength: float = 780.5e-9
    theta_full: float = math.radians(46.0)
    polarization: tuple = (0.0, 1.0, 0.0)
    amplitudes: tuple = (1.0, 1.0)
    waist_x: float | None = None
    waist_y: float | None = None

    def __post_init__(self):
        if not 0 < self.theta_full < math.pi:
            raise ValueError("full convergence angle must lie in (0, pi)")
        p = np.asarray(self.polarization, dtype=float)
        nrm = np.linalg.norm(p)
        if nrm == 0:
            raise ValueError("polarization must be nonzero")
        object.__setattr__(self, "polarization", tuple(float(v) for v in p / nrm))
        if len(self.amplitudes) != 2:
            raise ValueError("two beam amplitudes required")

    @classmethod
    def for_period(cls, period, wavelength=780.5e-9, **kw):
        """Geometry whose axial fringe period equals ``period``."""
        s = wavelength / (2 * period)
        if not 0 < s < 1:
            raise ValueError(f"period {period} not reachable at wavelength {wavelength}")
        return cls(wavelength=wavelength, theta_full=2 * math.asin(s), **kw)

    @property
    def fringe_period(self) -> float:
        return self.wavelength / (2 * math.sin(self.theta_full / 2))

    def plane_waves(self):
        half = self.theta_full / 2
        pol = np.asarray(self.polarization)
        waves = []
        for sign, amp in zip((1.0, -1.0), self.amplitudes):
            k = np.array([sign * math.sin(half), 0.0, -math.cos(half)])
            e = pol - k * (pol @ k)
            if np.linalg.norm(e) < 1e-12:
                raise ValueError("polarization parallel to a beam direction")
            e = e / np.linalg.norm(e)
            waves.append(PlaneWave(self.wavelength, tuple(k), tuple(e), complex(amp)))
        return waves

    def envelope(self, points):
        pts = np.asarray(points, dtype=float)
        g = np.ones(pts.shape[:-1])
        if self.waist_x:
            g = g * np.exp(-(pts[..., 0] / self.waist_x) ** 2)
        if self.waist_y:
            g = g * np.exp(-(pts[..., 1] / self.waist_y) ** 2)
        return g


def incident_field(geom: BeamGeometry, points):
    """Coherent sum of the two lattice plane waves, shape (..., 3).

    With waists set, the field amplitude carries the Gaussian envelope
    (intensity envelope exp(-2 x^2/w_x^2 - 2 y^2/w_y^2)).
    """
    pts = np.asarray(points, dtype=float)
    E = sum(w.field(pts) for w in geom.plane_waves())
    if geom.waist_x or geom.waist_y:
        E = E * geom.envelope(pts)[..., None]
    return E


def _start_order(kR):
    return int(math.ceil(kR + 4 * kR ** (1 / 3) + 2))


@dataclass
class CylinderScattering:
    """Series solution for one plane wave on an infinite dielectric cylinder."""

    fiber: FiberSpec
    wave: PlaneWave
    order: int | None = None
    tol: float = 1e-10
    max_order: int = 200
    orders: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        f, w = self.fiber, self.wave
        self.k0 = 2 * np.pi / w.wavelength
        kdir = np.asarray(w.direction, dtype=float)
        self.h = self.k0 * f.n2 * kdir[0]
        kt = kdir[1:] * self.k0 * f.n2
        self.g2 = float(np.hypot(*kt))               # outside transverse wavenumber
        if self.g2 < 1e-9 * self.k0:
            raise ValueError("grazing incidence along the fiber axis is not supported")
        self.phi_k = math.atan2(kt[1], kt[0])
        self.g1 = math.sqrt((self.k0 * f.n1) ** 2 - self.h**2)
        e = np.asarray(w.polarization, dtype=complex) * w.amplitude
        self.Ex0 = e[0]
        self.Hx0 = (f.n2 * np.cross(kdir, e))[0]
        if self.order is None:
            N = _start_order(self.g2 * f.radius)
            while True:
                self._solve(N)
                if self.last_term_ratio < self.tol:
                    break
                if N >= self.max_order:
                    raise SeriesConvergenceError(
                        f"series not converged at order {N}: last-term ratio "
                        f"{self.last_term_ratio:.2e} > {self.tol:.1e}")
                N = min(2 * N, self.max_order)
        else:
            self._solve(int(self.order))

    def _solve(self, N):
        f = self.fiber
        R = f.radius
        m = np.arange(-N, N + 1)
        h, k0 = self.h, self.k0
        g1, g2 = self.g1, self.g2
        x1, x2 = g1 * R, g2 * R
        J2, dJ2 = special.jv(m, x2), g2 * special.jvp(m, x2)
        H2, dH2 = special.hankel1(m, x2), g2 * special.h1vp(m, x2)
        J1, dJ1 = special.jv(m, x1), g1 * special.jvp(m, x1)
        inc = (1j ** m) * np.exp(-1j * m * self.phi_k)
        A, B = self.Ex0 * inc, self.Hx0 * inc

        def phis(gam2, n, f_, df_):
            # (E_phi per A, E_phi per B, Hn_phi per A, Hn_phi per B)
            one, zero = np.ones_like(f_), np.zeros_like(f_)
            _, eA, _, hA = transverse(m, h, gam2, k0, n, R, one, zero, f_, df_)
            _, eB, _, hB = transverse(m, h, gam2, k0, n, R, zero, one, f_, df_)
            return eA, eB, hA, hB

        iA, iB, ihA, ihB = phis(g2**2, f.n2, J2, dJ2)
        sA, sB, shA, shB = phis(g2**2, f.n2, H2, dH2)
        nA, nB, nhA, nhB = phis(g1**2, f.n1, J1, dJ1)
        M = np.zeros((m.size, 4, 4), dtype=complex)
        rhs = np.zeros((m.size, 4), dtype=complex)
        # unknowns: a (scattered E_x), b (scattered Hn_x), c, d (interior)
        M[:, 0, 0], M[:, 0, 2] = H2, -J1
        rhs[:, 0] = -A * J2
        M[:, 1, 1], M[:, 1, 3] = H2, -J1
        rhs[:, 1] = -B * J2
        M[:, 2] = np.stack([sA, sB, -nA, -nB], axis=-1)
        rhs[:, 2] = -(A * iA + B * iB)
        M[:, 3] = np.stack([shA, shB, -nhA, -nhB], axis=-1)
        rhs[:, 3] = -(A * ihA + B * ihB)
        sol = np.linalg.solve(M, rhs[..., None])[..., 0]
        self.orders = m
        self.a, self.b, self.c, self.d = sol.T
        self.A_inc, self.B_inc = A, B
        term = np.maximum(np.abs(self.a * H2), np.abs(self.b * H2))
        total = term.sum()
        edge = max(term[0], term[-1])
        self.last_term_ratio = float(edge / total) if total > 0 else 0.0
        self.N = N

    def _harmonics(self, points, interior, radial=None):
        pts = np.asarray(points, dtype=float)
        x = pts[..., 0]
        r, phi = polar(pts[..., 1], pts[..., 2])
        r = np.maximum(r, 1e-30)
        m = self.orders
        rr = r[..., None]
        if interior:
            g, n, A, B = self.g1, self.fiber.n1, self.c, self.d
        else:
            g, n, A, B = self.g2, self.fiber.n2, self.a, self.b
        Z, dZ = radial if radial is not None else radial_functions(
            self.N, g * r, "J" if interior else "H")
        dZ = g * dZ
        ang = np.exp(1j * m * phi[..., None])
        E_r, E_phi, H_r, H_phi = transverse(m, self.h, g**2, self.k0, n, rr, A, B, Z, dZ)
        axial = np.exp(1j * self.h * x)
        E_x = A * Z
        H_x = B * Z
        comps = [np.sum(q * ang, axis=-1) * axial for q in (E_r, E_phi, E_x, H_r, H_phi, H_x)]
        return comps, phi

    def field(self, points, interior=False, magnetic=False, radial=None):
        """Scattered field outside (or the total field inside with interior=True)."""
        (E_r, E_phi, E_x, H_r, H_phi, H_x), phi = self._harmonics(points, interior, radial)
        if magnetic:
            return to_cartesian(H_r, H_phi, H_x, phi)
        return to_cartesian(E_r, E_phi, E_x, phi)

    def cylindrical(self, points, interior=False):
        comps, _ = self._harmonics(points, interior)
        return comps


def radial_functions(N, x, kind):
    """Z_m(x) and Z_m'(x) for m = -N..N, shape x.shape + (2N+1,).

    Only orders 0..N+1 are evaluated; negative orders use Z_-m = (-1)^m Z_m
    and derivatives use Z_m' = (Z_{m-1} - Z_{m+1}) / 2.
    """
    x = np.asarray(x, dtype=float)[..., None]
    mp = np.arange(0, N + 2)
    Zp = special.jv(mp, x) if kind == "J" else special.hankel1(mp, x)
    sign = (-1.0) ** np.arange(1, N + 2)            # (-1)^m for m = 1..N+1
    neg = Zp[..., N + 1:0:-1] * sign[::-1]          # orders -(N+1)..-1
    ext = np.concatenate([neg, Zp], axis=-1)        # orders -(N+1)..N+1
    Z = ext[..., 1:-1]
    dZ = 0.5 * (ext[..., :-2] - ext[..., 2:])
    return Z, dZ


def scattered_field(fiber: FiberSpec, wave: PlaneWave, points, interior=False,
                    order=None, tol=1e-10):
    return CylinderScattering(fiber, wave, order=order, tol=tol).field(points, interior)


class LatticeField:
    """Total field sampler: two incident beams plus their scattered fields.

    ``fiber=None`` gives the bare interference pattern. Points inside the
    fiber evaluate to the interior field.
    """

    def __init__(self, geom: BeamGeometry, fiber: FiberSpec | None, order=None, tol=1e-10):
        self.geom = geom
        self.fiber = fiber
        self.waves = geom.plane_waves()
        self.solutions = ([CylinderScattering(fiber, w, order=order, tol=tol)
                           for w in self.waves] if fiber is not None else [])

    def E(self, points):
        pts = np.asarray(points, dtype=float)
        if self.fiber is None:
            out = sum(w.field(pts) for w in self.waves)
        else:
            r = np.hypot(pts[..., 1], pts[..., 2])
            inside = r < self.fiber.radius
            out = np.zeros(pts.shape, dtype=complex)
            po = pts[~inside]
            if po.size:
                out[~inside] = sum(w.field(po) for w in self.waves) + self._scattered(po, False)
            pi_ = pts[inside]
            if pi_.size:
                out[inside] = self._scattered(pi_, True)
        if self.geom.waist_x or self.geom.waist_y:
            out = out * self.geom.envelope(pts)[..., None]
        return out

    def _scattered(self, pts, interior, chunk=4096):
        out = np.zeros(pts.shape, dtype=complex)
        sols = self.solutions
        N = max(s.N for s in sols)
        for s in sols:
            if s.N != N:
                s._solve(N)
        r = np.hypot(pts[..., 1], pts[..., 2])
        for lo in range(0, pts.shape[0], chunk):
            sl = slice(lo, lo + chunk)
            cache = {}
            for s in sols:
                g = s.g1 if interior else s.g2
                key = (round(g, 6), interior)
                if key not in cache:
                    cache[key] = radial_functions(N, g * r[sl], "J" if interior else "H")
                out[sl] += s.field(pts[sl], interior=interior, radial=cache[key])
        return out

    def intensity(self, points):
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 3)
        I = np.sum(np.abs(self.E(flat)) ** 2, axis=-1)
        return I.reshape(pts.shape[:-1])

    def surface_distance(self, points):
        pts = np.asarray(points, dtype=float)
        R = self.fiber.radius if self.fiber is not None else 0.0
        return np.hypot(pts[..., 1], pts[..., 2]) - R


@dataclass(frozen=True)
class PlaneSpec:
    kind: str = "yz"        # "yz" (fixed x) or "xz" (fixed y)
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("yz", "xz"):
            raise ValueError(f"plane must be 'yz' or 'xz', got {self.kind!r}")

    def points(self, u, v):
        U, V = np.meshgrid(u, v, indexing="ij")
        O = np.full_like(U, self.offset)
        if self.kind == "yz":
            return np.stack([O, U, V], axis=-1)
        return np.stack([U, O, V], axis=-1)


@dataclass(frozen=True)
class GridSpec:
    u_range: tuple = (-1.5e-6, 1.5e-6)
    v_range: tuple = (-1.5e-6, 1.5e-6)
    step: float = 10e-9

    def axes(self):
        nu = int(round((self.u_range[1] - self.u_range[0]) / self.step)) + 1
        nv = int(round((self.v_range[1] - self.v_range[0]) / self.step)) + 1
        return (np.linspace(*self.u_range, nu), np.linspace(*self.v_range, nv))


@dataclass
class IntensityMap:
    plane: PlaneSpec
    u: np.ndarray
    v: np.ndarray
    intensity: np.ndarray     # normalized, shape (len(u), len(v))
    mask: np.ndarray          # True inside the fiber
    norm: float               # raw |E|^2 that maps to 1
    fiber_radius: float = 0.0

    def points(self):
        return self.plane.points(self.u, self.v)


def total_intensity_map(geom: BeamGeometry, fiber: FiberSpec | None,
                        plane: PlaneSpec = PlaneSpec(), grid: GridSpec = GridSpec(),
                        sampler: LatticeField | None = None) -> IntensityMap:
    if grid.step > geom.wavelength / 20 * (1 + 1e-9):
        raise ValueError("grid spacing must not exceed wavelength/20")
    sampler = sampler or LatticeField(geom, fiber)
    u, v = grid.axes()
    pts = plane.points(u, v)
    I = sampler.intensity(pts)
    R = fiber.radius if fiber is not None else 0.0
    mask = np.hypot(pts[..., 1], pts[..., 2]) < R
    norm = float(I[~mask].max())
    return IntensityMap(plane, u, v, I / norm, mask, norm, R)


@dataclass(frozen=True)
class Maximum:
    position: tuple
    intensity: float
    surface_distance: float


def _parabola_offset(ym, y0, yp):
    den = ym - 2 * y0 + yp
    if den >= 0:
        return 0.0, y0
    t = 0.5 * (ym - yp) / den
    return t, y0 - 0.25 * (ym - yp) * t


def find_intensity_maxima(imap: IntensityMap, region=None):
    """Local maxima of a map, refined by per-axis quadratic interpolation.

    ``region`` is an optional callable (u, v) -> bool array selecting where to
    look. Returns a list of Maximum sorted by distance from the fiber surface.
    """
    I = np.where(imap.mask, -np.inf, imap.intensity)
    core = I[1:-1, 1:-1]
    is_max = np.ones_like(core, dtype=bool)
    for du in (-1, 0, 1):
        for dv in (-1, 0, 1):
            if du == 0 and dv == 0:
                continue
            nb = I[1 + du:I.shape[0] - 1 + du, 1 + dv:I.shape[1] - 1 + dv]
            is_max &= core > nb if (du, dv) < (0, 0) else core >= nb
    is_max &= np.isfinite(core)
    # drop maxima touching the fiber mask: they sit on the boundary, not in the field
    is_max &= ~(imap.mask[:-2, 1:-1] | imap.mask[2:, 1:-1] | imap.mask[1:-1, :-2] | imap.mask[1:-1, 2:])
    if region is not None:
        U, V = np.meshgrid(imap.u[1:-1], imap.v[1:-1], indexing="ij")
        is_max &= region(U, V)
    du_ = imap.u[1] - imap.u[0]
    dv_ = imap.v[1] - imap.v[0]
    out = []
    for i, j in zip(*np.nonzero(is_max)):
        i, j = i + 1, j + 1
        tu, _ = _parabola_offset(I[i - 1, j], I[i, j], I[i + 1, j])
        tv, _ = _parabola_offset(I[i, j - 1], I[i, j], I[i, j + 1])
        u = imap.u[i] + tu * du_
        v = imap.v[j] + tv * dv_
        val = I[i, j] + _quad_gain(I, i, j, tu, tv)
        pos = imap.plane.points(np.array([u]), np.array([v]))[0, 0]
        d = float(np.hypot(pos[1], pos[2]) - imap.fiber_radius)
        out.append(Maximum(tuple(float(p) for p in pos), float(val), d))
    out.sort(key=lambda m: m.surface_distance)
    return out


def _quad_gain(I, i, j, tu, tv):
    gu = 0.5 * (I[i + 1, j] - I[i - 1, j])
    gv = 0.5 * (I[i, j + 1] - I[i, j - 1])
    huu = I[i + 1, j] - 2 * I[i, j] + I[i - 1, j]
    hvv = I[i, j + 1] - 2 * I[i, j] + I[i, j - 1]
    return gu * tu + gv * tv + 0.5 * (huu * tu**2 + hvv * tv**2)


def axial_contrast(sampler: LatticeField, y, z, n=64):
    """Fringe visibility (Imax - Imin)/(Imax + Imin) along x at fixed (y, z)."""
    d = sampler.geom.fringe_period
    x = np.linspace(0, d, n, endpoint=False)
    pts = np.stack([x, np.full_like(x, y), np.full_like(x, z)], axis=-1)
    I = sampler.intensity(pts)
    return float((I.max() - I.min()) / (I.max() + I.min()))
