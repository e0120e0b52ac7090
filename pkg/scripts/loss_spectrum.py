"""Parametric loss spectrum at one lattice period, saved as x, y, sigma in an .npy file.

    python scripts/loss_spectrum.py 1.0 --depth-mK 0.4 --lo 0.5 --hi 3.0 --n 30
"""
import argparse
import time

import numpy as np

from fiberlattice.dynamics import EnsembleConfig, ModulationSpec, SplineLattice, loss_spectrum
from fiberlattice.fibermode import FiberSpec
from fiberlattice.fieldsim import BeamGeometry, LatticeField
from fiberlattice.fitkit import fit_double_gaussian
from fiberlattice.quantities import RB85, kB, mK
from fiberlattice.trapmodel import TrapConfig, TrapPotential, axial_frequency, characterize_site


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("period_um", type=float)
    ap.add_argument("--depth-mK", type=float, default=0.4)
    ap.add_argument("--lo", type=float, default=0.5, help="lowest drive frequency / f_ax")
    ap.add_argument("--hi", type=float, default=3.0, help="highest drive frequency / f_ax")
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--atoms", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default=None, help="output .npy (default spec_<period>.npy)")
    a = ap.parse_args()

    t0 = time.perf_counter()
    d = a.period_um * 1e-6
    pot = TrapPotential(LatticeField(BeamGeometry.for_period(d), FiberSpec()),
                        TrapConfig(depth=mK(a.depth_mK)))
    site = characterize_site(pot, pot.config, pot.reference)
    f6 = axial_frequency(d, mK(a.depth_mK), RB85.mass)
    print(f"f_ax {site.f_ax:.0f} Hz (harmonic {f6:.0f}), f_rad {site.f_rad:.0f} Hz, "
          f"U_eff {site.depth_eff / kB * 1e6:.1f} uK")
    freqs = np.linspace(2 * a.lo * f6, 2 * a.hi * f6, a.n)
    res = loss_spectrum(EnsembleConfig(count=a.atoms, seed=a.seed), site, SplineLattice(pot),
                        ModulationSpec(distortion=0.05), freqs, threads=a.threads)
    for f, s in zip(res.series.x, res.series.y):
        print(f"{f / 1e3:8.1f} kHz  {s:.3f}")
    fit = fit_double_gaussian(res.series, dips=True)
    print(f"f_ax from the 2 f_ax dip: {fit['c1'] / 2:.0f} +- {fit.error('c1') / 2:.0f} Hz, "
          f"ratio to harmonic {fit['c1'] / 2 / f6:.4f}; {time.perf_counter() - t0:.0f} s")
    out = a.out or f"spec_{a.period_um}.npy"
    np.save(out, np.array([res.series.x, res.series.y, res.series.sigma]))


if __name__ == "__main__":
    main()
