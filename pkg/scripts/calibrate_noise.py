"""Mean fitted uncertainty vs synthetic noise level, used to pick the fig3 noise defaults."""
import argparse

import numpy as np

from fiberlattice.fitkit import fit_lifetime, fit_saturation, fit_spectrum
from fiberlattice.synthetic import lifetime_data, saturation_data, spectrum_data


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--draws", type=int, default=20)
    a = ap.parse_args()
    seeds = range(a.draws)
    for n in (0.008, 0.016, 0.03):
        e = [fit_spectrum(spectrum_data(noise=n, rng=s)).error("OD") for s in seeds]
        print(f"spectrum noise {n:.3f}: sigma_OD {np.mean(e):.3f}")
    for n in (0.25, 0.5, 1.0):
        e = [fit_lifetime(lifetime_data(noise=n, rng=s)).error("tau") * 1e3 for s in seeds]
        print(f"lifetime noise {n:.2f}: sigma_tau {np.mean(e):.3f} ms")
    for n in (100e-12, 195e-12, 300e-12):
        e = [fit_saturation(saturation_data(noise=n, rng=s)).error("P_abs_max") * 1e9 for s in seeds]
        print(f"saturation noise {n * 1e12:.0f} pW: sigma_P_abs_max {np.mean(e):.3f} nW")


if __name__ == "__main__":
    main()
