"""Refit saved loss spectra (spec_<d>.npy) for f_ax, the U0 fit and the log-log slope.

    python scripts/refit_fig4.py 0.88 1.0 1.2 1.5 --depth-mK 0.4
"""
import argparse

import numpy as np

from fiberlattice.fitkit import DataSeries, fit_double_gaussian, fit_fax_vs_period
from fiberlattice.quantities import mK
from fiberlattice.trapmodel import axial_frequency


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("periods_um", type=float, nargs="+")
    ap.add_argument("--depth-mK", type=float, default=0.4)
    ap.add_argument("--dir", default=".")
    a = ap.parse_args()

    fax, sfax = [], []
    for d in a.periods_um:
        x, y, s = np.load(f"{a.dir}/spec_{d}.npy")
        fit = fit_double_gaussian(DataSeries(x, y, s), dips=True)
        fax.append(fit["c1"] / 2)
        sfax.append(fit.error("c1") / 2)
        print(f"{d:5.2f} um  f_ax {fax[-1]:8.0f} +- {sfax[-1]:6.0f} Hz  "
              f"ratio {fax[-1] / axial_frequency(d * 1e-6, mK(a.depth_mK)):.4f}")
    d = np.array(a.periods_um) * 1e-6
    fax, sfax = np.array(fax), np.array(sfax)
    u = fit_fax_vs_period(DataSeries(d, fax, sfax))
    print(f"U0 fit {u.flags['U0_mK']:.4f} +- {u.flags['U0_mK_err']:.4f} mK "
          f"(ratio {u.flags['U0_mK'] / a.depth_mK:.3f})")
    print(f"unweighted slope {np.polyfit(np.log(d), np.log(fax), 1)[0]:.3f}")
    c, cov = np.polyfit(np.log(d), np.log(fax), 1, w=fax / sfax, cov="unscaled")
    print(f"weighted slope {c[0]:.3f} +- {np.sqrt(cov[0, 0]):.3f}")


if __name__ == "__main__":
    main()
