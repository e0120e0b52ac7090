"""Cylindrical-harmonic field components for fields varying as exp(i(h x + m phi)).

The cylinder axis is x. The transverse plane is (y, z) with
r = hypot(y, z), phi = atan2(z, y), so that (e_r, e_phi, e_x) is right handed.
Magnetic fields are carried in electric units, Hn = Z0 * H, and the time
dependence is exp(-i omega t).

Given the axial components E_x = A f(r) and Hn_x = B f(r) of one harmonic in a
homogeneous medium of index n, the transverse components follow from Maxwell's
equations with gamma^2 = (n k0)^2 - h^2:

    E_t  = i/gamma^2 [h grad_t E_x - k0 x_hat cross grad_t Hn_x]
    Hn_t = i/gamma^2 [h grad_t Hn_x + k0 n^2 x_hat cross grad_t E_x]
"""
from __future__ import annotations

import numpy as np


def transverse(m, h, gamma2, k0, n, r, A, B, f, df):
    """(E_r, E_phi, Hn_r, Hn_phi) of one harmonic; df is d f / d r.

    All arguments broadcast. gamma2 may be negative (evanescent fields).
    """
    pre = 1j / gamma2
    im_r = 1j * m / r
    E_r = pre * (h * A * df + k0 * im_r * B * f)
    E_phi = pre * (h * im_r * A * f - k0 * B * df)
    H_r = pre * (h * B * df - k0 * n**2 * im_r * A * f)
    H_phi = pre * (h * im_r * B * f + k0 * n**2 * A * df)
    return E_r, E_phi, H_r, H_phi


def polar(y, z):
    r = np.hypot(y, z)
    phi = np.arctan2(z, y)
    return r, phi


def to_cartesian(E_r, E_phi, E_x, phi):
    """Stack cylindrical components into (..., 3) cartesian (x, y, z)."""
    cp, sp = np.cos(phi), np.sin(phi)
    return np.stack([E_x, E_r * cp - E_phi * sp, E_r * sp + E_phi * cp], axis=-1)
