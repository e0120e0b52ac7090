"""HE11 mode of a step-index nanofiber, Bragg spacing and emitter coupling.

The exact (full-vector) eigenvalue equation for hybrid modes of azimuthal
order m on a two-layer cylinder of radius a is

    (J'/(uJ) + K'/(wK)) (n1^2 J'/(uJ) + n2^2 K'/(wK))
        = m^2 n_eff^2 (1/u^2 + 1/w^2)^2

with u = a sqrt(k1^2 - beta^2), w = a sqrt(beta^2 - k2^2). It is solved here
multiplied through by (uJ wK)^2, which removes the poles at J_m(u) = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .cylwaves import transverse
from .quantities import c, eps0


class ModeCutoffError(ValueError):
    pass


class ModeSolverError(RuntimeError):
    pass


def silica_index(wavelength: float) -> float:
    """Fused silica Sellmeier (Malitson 1965); wavelength in metres."""
    lam2 = (wavelength * 1e6) ** 2
    B = (0.6961663, 0.4079426, 0.8974794)
    C = (0.0684043**2, 0.1162414**2, 9.896161**2)
    return float(np.sqrt(1 + sum(b * lam2 / (lam2 - cc) for b, cc in zip(B, C))))


@dataclass(frozen=True)
class FiberSpec:
    radius: float = 240e-9
    n1: float = 1.4537
    n2: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"fiber radius must be positive, got {self.radius}")
        if not self.n1 > self.n2 >= 1.0:
            raise ValueError(f"need n1 > n2 >= 1, got n1={self.n1}, n2={self.n2}")

    def v_number(self, wavelength: float) -> float:
        return 2 * np.pi * self.radius / wavelength * np.sqrt(self.n1**2 - self.n2**2)


def dispersion_residual(fiber: FiberSpec, wavelength: float, n_eff, m: int = 1):
    """Pole-free HE/EH characteristic function; zero at a guided-mode n_eff."""
    n_eff = np.asarray(n_eff, dtype=float)
    k0 = 2 * np.pi / wavelength
    a = fiber.radius
    u = a * k0 * np.sqrt(fiber.n1**2 - n_eff**2)
    w = a * k0 * np.sqrt(n_eff**2 - fiber.n2**2)
    return _char(u, w, fiber.n1, fiber.n2, n_eff, m)


def _char(u, w, n1, n2, n_eff, m):
    J, Jp = special.jv(m, u), special.jvp(m, u)
    # exponentially scaled K; the common factor exp(-w) drops out of the ratio
    K, Kp = special.kve(m, w), special.kvp(m, w) * np.exp(w)
    uJ, wK = u * J, w * K
    with np.errstate(divide="ignore", invalid="ignore"):
        return _char_terms(J, Jp, K, Kp, uJ, wK, u, w, n1, n2, n_eff, m)


def _char_terms(J, Jp, K, Kp, uJ, wK, u, w, n1, n2, n_eff, m):
    lhs = (Jp * wK + Kp * uJ) * (n1**2 * Jp * wK + n2**2 * Kp * uJ)
    rhs = (m * n_eff * (1 / u**2 + 1 / w**2) * uJ * wK) ** 2
    scale = (np.abs(Jp * wK) + np.abs(Kp * uJ)) ** 2 * n1**2 + np.abs(rhs)
    return (lhs - rhs) / scale


@dataclass(frozen=True)
class GuidedMode:
    fiber: FiberSpec
    wavelength: float
    n_eff: float
    u: float
    w: float
    residual: float
    # normalized intensity vs surface distance, tabulated on [0, 2 wavelengths]
    profile_d: np.ndarray = field(repr=False, compare=False, default=None)
    profile_I: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def k0(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def beta(self) -> float:
        return self.k0 * self.n_eff

    @property
    def kappa(self) -> float:
        """Transverse decay constant outside the fiber (1/m)."""
        return np.sqrt(self.beta**2 - (self.k0 * self.fiber.n2) ** 2)

    # HE11 field with circular polarization (m = +1) and E_x = J1 inside.
    # E_x and Hn_x continuity fix the outer amplitudes; E_phi continuity fixes
    # Hn_x / E_x. Hn_phi continuity then holds only at the eigenvalue.
    def _coeffs(self):
        a = self.fiber.radius
        p, q = self.u / a, self.w / a
        J, Jp = special.jv(1, self.u), special.jvp(1, self.u)
        K, Kp = special.kv(1, self.w), special.kvp(1, self.w)
        A_in = 1.0
        B_in = (1j * self.beta * J * (1 / p**2 + 1 / q**2)
                / (a * self.k0 * (Jp / p + J * Kp / (q * K))))
        return A_in, B_in, J / K, B_in * J / K

    def fields(self, r):
        """Cylindrical (E_r, E_phi, E_x, Hn_r, Hn_phi, Hn_x) of the m=+1 mode at radii r."""
        r = np.asarray(r, dtype=float)
        a = self.fiber.radius
        A_in, B_in, A_out, B_out = self._coeffs()
        out = np.empty((6,) + r.shape, dtype=complex)
        inside = r < a
        p = self.u / a
        q = self.w / a
        for sel, kind in ((inside, "in"), (~inside, "out")):
            rr = r[sel]
            if kind == "in":
                f, df = special.jv(1, p * rr), p * special.jvp(1, p * rr)
                A, B, n, g2 = A_in, B_in, self.fiber.n1, p**2
            else:
                f, df = special.kv(1, q * rr), q * special.kvp(1, q * rr)
                A, B, n, g2 = A_out, B_out, self.fiber.n2, -(q**2)
            E_r, E_phi, H_r, H_phi = transverse(1, self.beta, g2, self.k0, n,
                                                rr, A, B, f, df)
            out[:, sel] = np.array([E_r, E_phi, A * f, H_r, H_phi, B * f])
        return out

    def power(self) -> float:
        """Axial Poynting flux 0.5 Re int (E x H*)_x dA in units where Hn = Z0 H."""
        a = self.fiber.radius

        def sx(r):
            E_r, E_phi, _, H_r, H_phi, _ = self.fields(np.array([r]))[:, 0]
            return 0.5 * np.real(E_r * np.conj(H_phi) - E_phi * np.conj(H_r)) * 2 * np.pi * r

        inner = integrate.quad(sx, 0, a, limit=200)[0]
        outer = integrate.quad(sx, a, np.inf, limit=200)[0]
        return inner + outer

    def intensity(self, r):
        """|E|^2 of the circularly polarized mode (azimuthally uniform)."""
        F = self.fields(r)
        return np.sum(np.abs(F[:3]) ** 2, axis=0)


def _scan_root(fun, lo, hi, n):
    grid = np.linspace(lo, hi, n)
    vals = fun(grid)
    for i in range(n - 1):
        if np.isfinite(vals[i]) and np.isfinite(vals[i + 1]) and vals[i] * vals[i + 1] < 0:
            return grid[i], grid[i + 1]
    return None


def solve_he11(fiber: FiberSpec, wavelength: float, n_scan: int = 4000,
               xtol: float = 1e-15) -> GuidedMode:
    """Fundamental hybrid mode. Scans u upward from 0 and refines the first root.

    The scan runs in the normalized transverse wavenumber u in (0, V) so that
    the fundamental root is isolated even for thick fibers, where many modes
    crowd near n1.
    """
    V = fiber.v_number(wavelength)
    if not V > 0:
        raise ModeCutoffError("V number must be positive")
    n1, n2 = fiber.n1, fiber.n2

    def n_of_u(u):
        return np.sqrt(n1**2 - (u / V) ** 2 * (n1**2 - n2**2))

    def f_u(u):
        return dispersion_residual(fiber, wavelength, n_of_u(u))

    eps = 1e-9 * V
    bracket = _scan_root(f_u, eps, V - eps, n_scan)
    if bracket is None:
        raise ModeCutoffError(f"no HE11 root in (n2, n1) for V={V:.4g}")
    try:
        u0 = optimize.brentq(f_u, *bracket, xtol=xtol * V, rtol=4 * np.finfo(float).eps,
                             maxiter=500)
    except (RuntimeError, ValueError) as exc:
        raise ModeSolverError(f"root refinement failed in bracket u={bracket}: {exc}") from exc
    n_eff = float(n_of_u(u0))
    w0 = np.sqrt(V**2 - u0**2)
    res = float(abs(dispersion_residual(fiber, wavelength, n_eff)))
    if not n2 < n_eff < n1:
        raise ModeSolverError(f"n_eff={n_eff} outside ({n2}, {n1})")
    mode = GuidedMode(fiber, wavelength, n_eff, float(u0), float(w0), res)
    d = np.linspace(0, 2 * wavelength, 401)
    I = mode.intensity(fiber.radius * (1 + 1e-12) + d)
    object.__setattr__(mode, "profile_d", d)
    object.__setattr__(mode, "profile_I", I / I[0])
    return mode


def bragg_period(q: int, wavelength: float, n_eff: float) -> float:
    """Lattice period q * lambda0 / (2 n_eff) for constructive Bragg reflection."""
    if int(q) != q or q < 1:
        raise ValueError(f"diffraction order must be a positive integer, got {q}")
    if not n_eff > 0:
        raise ValueError("n_eff must be positive")
    return q * wavelength / (2 * n_eff)


def evanescent_intensity(mode: GuidedMode, d):
    """Guided-mode intensity at surface distance d relative to the surface value."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("surface distance must be non-negative")
    a = mode.fiber.radius
    I0 = mode.intensity(np.array([a * (1 + 1e-12)]))[0]
    return mode.intensity(a * (1 + 1e-12) + d) / I0


def coupling_efficiency(mode: GuidedMode, position) -> float:
    """Fraction of spontaneous emission into the guided mode, both directions.

    Single-mode overlap estimate for an isotropically oriented dipole: the
    rate into one guided mode and direction is
    Gamma_1 / Gamma_0 = 3 pi eps0 c^3 |d.E|^2 / (4 omega^2 P)
    (field amplitude E carrying power P). Summed over the two degenerate
    polarizations and two propagation directions with |d.E|^2 -> |E|^2 / 3.
    """
    p = np.asarray(position, dtype=float)
    r = float(np.hypot(p[1], p[2]))
    if r <= mode.fiber.radius:
        raise ValueError("emitter position lies inside the fiber")
    E2 = float(mode.intensity(np.array([r]))[0])
    # power normalization: power() uses Hn = Z0 H, so P_SI = power / Z0
    Z0 = 1 / (eps0 * c)
    P = mode.power() / Z0
    omega = mode.k0 * c
    per_mode = 3 * np.pi * eps0 * c**3 * E2 / (4 * omega**2 * P)
    return float(4 * per_mode / 3)
