"""Seeded synthetic data sets for the absorption, lifetime and saturation fits."""
from __future__ import annotations

import numpy as np

from .fitkit import DataSeries, lifetime_model, saturation_model, spectrum_model


def spectrum_data(od=10.9, gamma_eff=12e6, delta_ls=3e6, y0=0.0, noise=0.016, rng=None,
                  detuning=None):
    """Transmission vs probe detuning (Hz) with Gaussian noise of ``noise``."""
    rng = np.random.default_rng(rng)
    if detuning is None:
        detuning = np.linspace(-40e6, 46e6, 87)
    y = spectrum_model(detuning, od, delta_ls, gamma_eff, y0)
    if noise > 0:
        y = y + rng.normal(0, noise, detuning.shape)
    sig = np.full(detuning.shape, noise) if noise > 0 else None
    return DataSeries(detuning, y, sig, "detuning [Hz]", "transmission")


def lifetime_data(tau=14.7e-3, amplitude=10.9, noise=0.5, rng=None, times=None, offset=0.0):
    """OD vs hold time (s); defaults sample 5 to 60 ms in 5 ms steps."""
    rng = np.random.default_rng(rng)
    if times is None:
        times = np.arange(5e-3, 60.1e-3, 5e-3)
    y = lifetime_model(times, amplitude, tau, offset)
    if noise > 0:
        y = y + rng.normal(0, noise, times.shape)
    sig = np.full(times.shape, noise) if noise > 0 else None
    return DataSeries(times, y, sig, "hold_time [s]", "od")


def saturation_data(p_abs_max=6.2e-9, p_sat=400e-12, noise=195e-12, rng=None, p_in=None):
    """Absorbed vs incident probe power (W); defaults span 0.1 to 25 P_sat."""
    rng = np.random.default_rng(rng)
    if p_in is None:
        p_in = p_sat * np.geomspace(0.1, 25, 20)
    y = saturation_model(p_in, p_abs_max, p_sat)
    if noise > 0:
        y = y + rng.normal(0, noise, p_in.shape)
    sig = np.full(p_in.shape, noise) if noise > 0 else None
    return DataSeries(p_in, y, sig, "p_in [W]", "p_abs [W]")
