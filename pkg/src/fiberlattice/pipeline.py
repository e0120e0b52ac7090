"""Stage runners and figure recipes behind the command line.

Each stage writes its own CSV/JSON/SVG files. A recipe collects tolerance
checks into ``summary.json``; the run passes only if every check passes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ScenarioConfig
from .dynamics import SplineLattice, loss_spectrum
from .fibermode import bragg_period, solve_he11
from .fieldsim import GridSpec, LatticeField, PlaneSpec, find_intensity_maxima, total_intensity_map
from .fitkit import (DataSeries, atom_number, extract_fax, fit_double_gaussian, fit_fax_vs_period,
                     fit_lifetime, fit_saturation, fit_spectrum)
from .io import metadata, write_csv, write_json
from .quantities import kB, mK
from .synthetic import lifetime_data, saturation_data, spectrum_data
from .trapmodel import (TrapPotential, axial_frequency, characterize_site, debye_waller,
                        radial_cut, radial_threshold, recoil_heating_rate, scattering_rate,
                        sigma_axial)

log = logging.getLogger(__name__)

# values the checks compare against
QUOTED_GAMMA_SC = 4.9e2          # 1/s at 0.5 mK
QUOTED_HEATING = 0.2e-3          # K/s
QUOTED_N = 1270.0
QUOTED_N_ERR = 35.0


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}' failed: {type(exc).__name__}: {exc}")
        self.stage = stage


@dataclass
class Check:
    name: str
    value: float
    target: float
    tolerance: float                # absolute unless ``relative``
    relative: bool = False
    low: float | None = None        # explicit interval overrides target +- tolerance
    high: float | None = None
    note: str = ""

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        if self.low is not None or self.high is not None:
            lo = -np.inf if self.low is None else self.low
            hi = np.inf if self.high is None else self.high
            return bool(lo <= self.value <= hi)
        tol = self.tolerance * abs(self.target) if self.relative else self.tolerance
        return bool(abs(self.value - self.target) <= tol)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return {k: v for k, v in d.items() if v is not None and v != ""}


@dataclass
class Report:
    recipe: str
    out: Path
    checks: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    error: dict | None = None
    stage: str = ""

    @property
    def passed(self) -> bool:
        return self.error is None and all(c.passed for c in self.checks)

    def add(self, *checks):
        self.checks.extend(checks)

    def file(self, name):
        p = self.out / name
        self.outputs.append(name)
        return p

    def summary(self, cfg: ScenarioConfig):
        s = {
            "recipe": self.recipe,
            "tool": "fiberlattice",
            "version": __version__,
            "config_hash": cfg.digest(),
            "seed": cfg.seed,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "values": self.values,
            "outputs": sorted(set(self.outputs)),
        }
        if self.error:
            s["error"] = self.error
        return s


# ---------------------------------------------------------------- builders

def build_potential(cfg: ScenarioConfig, period=None, depth_mK=None):
    fiber = cfg.fiber.build()
    geom = cfg.beams.build(period)
    trap = cfg.trap.build(depth_mK)
    field_ = LatticeField(geom, fiber)
    return TrapPotential(field_, trap), trap


def _meta(cfg, **extra):
    return metadata(cfg.digest(), **extra)


def _svg(path, draw):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "fiberlattice"
    fig, ax = plt.subplots(figsize=(5, 4))
    draw(fig, ax)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------- stages

def stage_mode(cfg: ScenarioConfig, report: Report | None = None):
    fiber = cfg.fiber.build()
    species = cfg.trap.build().species
    mode = solve_he11(fiber, species.wavelength)
    table = [(q, bragg_period(q, species.wavelength, mode.n_eff)) for q in range(1, 6)]
    info = {"wavelength_m": species.wavelength, "n_eff": mode.n_eff, "beta_per_m": mode.beta,
            "kappa_per_m": float(mode.kappa), "residual": mode.residual}
    if report is not None:
        report.stage = "mode"
        write_csv(report.file("bragg_periods.csv"),
                  {"q": [q for q, _ in table], "d_lat [m]": [d for _, d in table]},
                  _meta(cfg, **{k: repr(v) for k, v in info.items()}))
    return mode, info, table


def stage_field(cfg: ScenarioConfig, report: Report, svg=True, period=None):
    """y-z map through a lattice maximum, x-z map through the fiber axis, and
    the intensity maxima above the fiber."""
    report.stage = "field"
    fiber = cfg.fiber.build()
    geom = cfg.beams.build(period)
    sampler = LatticeField(geom, fiber)
    hw = cfg.map.half_width_um * 1e-6
    step = cfg.map.step_nm * 1e-9
    maps = {
        "yz": total_intensity_map(geom, fiber, PlaneSpec("yz", 0.0),
                                  GridSpec((-hw, hw), (-hw, hw), step), sampler),
        "xz": total_intensity_map(geom, fiber, PlaneSpec("xz", 0.0),
                                  GridSpec((-geom.fringe_period, geom.fringe_period), (-hw, hw), step),
                                  sampler),
    }
    # maxima in a narrow column above the fiber (beams arrive from +z)
    maxima = find_intensity_maxima(maps["yz"], region=lambda u, v: (np.abs(u) < 0.15e-6) & (v > 0))
    for plane, imap in maps.items():
        pts = imap.points().reshape(-1, 3)
        write_csv(report.file(f"intensity_{plane}.csv"),
                  {"x [m]": pts[:, 0], "y [m]": pts[:, 1], "z [m]": pts[:, 2],
                   "I": np.where(imap.mask, np.nan, imap.intensity).ravel()},
                  _meta(cfg, plane=plane, normalization="exterior maximum of the map"))
        sidecar = {"plane": plane, "offset_m": imap.plane.offset,
                   "step_m": float(imap.u[1] - imap.u[0]),
                   "u_range_m": [float(imap.u[0]), float(imap.u[-1])],
                   "v_range_m": [float(imap.v[0]), float(imap.v[-1])],
                   "fiber_radius_m": fiber.radius, "fringe_period_m": geom.fringe_period,
                   "theta_full_deg": math.degrees(geom.theta_full),
                   "polarization": geom.polarization, "norm_raw_E2": imap.norm}
        if plane == "yz":
            sidecar["maxima_above_fiber"] = [
                {"position_m": m.position, "surface_distance_m": m.surface_distance,
                 "intensity": m.intensity} for m in maxima]
        write_json(report.file(f"intensity_{plane}.json"), sidecar, _meta(cfg))
        if svg:
            _svg(report.file(f"intensity_{plane}.svg"), _heatmap(imap, plane, fiber.radius))
    return maps["yz"], maxima


def _heatmap(imap, plane, radius):
    def draw(fig, ax):
        from matplotlib.patches import Circle, Rectangle
        I = np.where(imap.mask, np.nan, imap.intensity)
        ext = [imap.u[0] * 1e6, imap.u[-1] * 1e6, imap.v[0] * 1e6, imap.v[-1] * 1e6]
        im = ax.imshow(I.T, origin="lower", extent=ext, cmap="inferno", vmin=0, aspect="auto")
        if plane == "yz":
            ax.add_patch(Circle((0, 0), radius * 1e6, fill=False, color="w", lw=0.8))
        else:
            ax.add_patch(Rectangle((ext[0], -radius * 1e6), ext[1] - ext[0], 2 * radius * 1e6,
                                   fill=False, color="w", lw=0.8))
        ax.set_xlabel(f"{plane[0]} (um)")
        ax.set_ylabel("z (um)")
        fig.colorbar(im, ax=ax, label="I / I_max")
    return draw


def stage_trap(cfg: ScenarioConfig, report: Report, svg=True, period=None, depth_mK=None):
    report.stage = "trap"
    pot, trap = build_potential(cfg, period, depth_mK)
    site = characterize_site(pot, trap, pot.reference)
    sp = trap.species
    mode = solve_he11(pot.field.fiber, sp.wavelength)
    d_lat = pot.field.geom.fringe_period
    T = cfg.ensemble.temperature_uK * 1e-6
    gamma_sc = scattering_rate(trap.depth, trap.detuning, sp.gamma)
    rep = site.report()
    rep.update({
        "U0_mK": trap.depth / kB * 1e3,
        "surface_distance_m": float(np.hypot(site.position[1], site.position[2]) - pot.radius),
        "f_ax_harmonic_Hz": float(axial_frequency(d_lat, trap.depth, sp.mass)),
        "d_lat_m": d_lat,
        "f_DW": debye_waller(cfg.trap.dw_k(mode.beta, sp.wavelength), sigma_axial(T, trap.depth, d_lat)),
        "f_DW_wavenumber": cfg.trap.dw_wavenumber,
        "f_DW_temperature_K": T,
        "gamma_sc_two_level_per_s": gamma_sc,
        "recoil_heating_two_level_K_per_s": recoil_heating_rate(gamma_sc, sp.recoil_energy),
        "radial_threshold_mK": radial_threshold(pot) / kB * 1e3,
    })
    rep.pop("surface_distance_nm", None)
    write_json(report.file("site_report.json"), rep, _meta(cfg))
    d = np.linspace(5e-9, 1.2e-6, 400)
    lat, vdw, tot = radial_cut(pot, d)
    write_csv(report.file("radial_cut.csv"),
              {"d [m]": d, "U_lattice [mK]": lat / kB * 1e3, "U_vdw [mK]": vdw / kB * 1e3,
               "U_total [mK]": tot / kB * 1e3}, _meta(cfg, cut="+z axis at x = 0"))
    if svg:
        def draw(fig, ax):
            ax.plot(d * 1e9, lat / kB * 1e3, label="lattice")
            ax.plot(d * 1e9, vdw / kB * 1e3, label="vdW")
            ax.plot(d * 1e9, tot / kB * 1e3, "k", label="total")
            ax.set_ylim(-1.3 * trap.depth / kB * 1e3, 0.3 * trap.depth / kB * 1e3)
            ax.set_xlabel("distance from surface (nm)")
            ax.set_ylabel("U / kB (mK)")
            ax.legend()
        _svg(report.file("radial_cut.svg"), draw)
    return pot, site, rep


def frequency_grid(cfg: ScenarioConfig, f_ax):
    m = cfg.modulation
    return np.linspace(m.f_lo_over_fax * f_ax, m.f_hi_over_fax * f_ax, m.n_freq)


def stage_dynamics(cfg: ScenarioConfig, report: Report, period=None, threads=1, tag=""):
    report.stage = "dynamics"
    pot, trap = build_potential(cfg, period)
    site = characterize_site(pot, trap, pot.reference)
    sampler = SplineLattice(pot)
    d_lat = pot.field.geom.fringe_period
    f6 = float(axial_frequency(d_lat, trap.depth, trap.species.mass))
    grid = frequency_grid(cfg, f6)
    m = cfg.modulation
    res = loss_spectrum(cfg.ensemble.build(cfg.seed), site, sampler, m.build(), grid,
                        criterion=m.criterion, readout_depth=mK(m.readout_depth_mK),
                        ramp_time=m.ramp_ms * 1e-3, threads=threads,
                        progress=lambda i, f, p: log.info("f_mod %.1f kHz survival %.3f", f / 1e3, p))
    s = res.series
    name = f"loss_spectrum{tag}"
    info = {"d_lat_m": d_lat, "U0_mK": trap.depth / kB * 1e3, "f_ax_harmonic_Hz": f6,
            "f_ax_hessian_Hz": site.f_ax, "f_rad_Hz": site.f_rad, "f_az_Hz": site.f_az,
            "U_eff_mK": site.depth_eff / kB * 1e3, "dt_s": res.dt, "baseline": res.baseline,
            **res.metadata}
    write_csv(report.file(f"{name}.csv"),
              {"f_mod [Hz]": s.x, "survival": s.y, "stderr": s.sigma}, _meta(cfg))
    write_json(report.file(f"{name}.json"), info, _meta(cfg))
    return res, info


# ---------------------------------------------------------------- recipes

def recipe_empty(cfg, report, threads=1):
    """Validation only: the config has already been built once on load."""
    report.values["validated"] = True


def recipe_fig2(cfg, report, threads=1):
    _, maxima = stage_field(cfg, report)
    d = [m.surface_distance for m in maxima]
    report.values["maxima_surface_distance_nm"] = [x * 1e9 for x in d]
    report.add(
        Check("nearest maximum above surface [nm]", d[0] * 1e9 if d else np.nan, 220, 30),
        Check("second maximum above surface [nm]", d[1] * 1e9 if len(d) > 1 else np.nan, 650, 80),
    )
    _, site, rep = stage_trap(cfg, report)
    report.values["site"] = rep
    report.add(
        Check("f_rad [kHz]", site.f_rad / 1e3, 300, 0.30, relative=True),
        Check("f_az [kHz]", site.f_az / 1e3, 70, 0.30, relative=True),
        Check("f_ax Hessian / harmonic estimate", site.f_ax / rep["f_ax_harmonic_Hz"], 1.0, 0.05),
        Check("radial confinement threshold [mK]", rep["radial_threshold_mK"], 0.1, 0,
              low=0.05, high=0.2),
    )
    # Debye-Waller factor at the quoted operating point
    sp = cfg.trap.build().species
    mode = solve_he11(cfg.fiber.build(), sp.wavelength)
    f_dw = debye_waller(cfg.trap.dw_k(mode.beta, sp.wavelength), sigma_axial(30e-6, mK(0.44), 1.0e-6))
    heat = recoil_heating_rate(QUOTED_GAMMA_SC, sp.recoil_energy)
    report.values["f_DW_30uK_0.44mK_1um"] = f_dw
    report.values["recoil_heating_at_quoted_rate_mK_per_s"] = heat * 1e3
    report.add(Check("Debye-Waller factor", f_dw, 0.30, 0.05),
               Check("recoil heating [mK/s]", heat * 1e3, QUOTED_HEATING * 1e3, 0.15, relative=True))


def recipe_fig3(cfg, report, threads=1):
    s = cfg.synth
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    spec = spectrum_data(s.od, s.gamma_eff_MHz * 1e6, s.delta_ls_MHz * 1e6, s.y0,
                         s.spectrum_noise, rng)
    fs = fit_spectrum(spec)
    life = lifetime_data(s.tau_ms * 1e-3, s.lifetime_amplitude, s.lifetime_noise, rng)
    fl = fit_lifetime(life)
    sat = saturation_data(s.p_abs_max_nW * 1e-9, s.p_sat_pW * 1e-12, s.saturation_noise_pW * 1e-12, rng)
    fsat = fit_saturation(sat)
    species = cfg.trap.build().species
    N, sN = atom_number(fsat["P_abs_max"], fsat.error("P_abs_max"), species)
    # per-atom OD from the stated total OD; the fitted one is reported alongside
    od_atom = s.od / N
    for name, data, fit in (("spectrum", spec, fs), ("lifetime", life, fl), ("saturation", sat, fsat)):
        write_csv(report.file(f"fig3_{name}.csv"),
                  {"x": data.x, "y": data.y, "sigma": data.sigma, "model": fit.model(data.x, *fit.values),
                   "residual": fit.residuals}, _meta(cfg, x_label=data.x_label, y_label=data.y_label))
        write_json(report.file(f"fig3_{name}_fit.json"), fit.to_dict(), _meta(cfg))
    report.values.update({"OD": [fs["OD"], fs.error("OD")], "tau_ms": [fl["tau"] * 1e3, fl.error("tau") * 1e3],
                          "P_abs_max_nW": [fsat["P_abs_max"] * 1e9, fsat.error("P_abs_max") * 1e9],
                          "N": [N, sN], "OD_atom_percent": od_atom * 100,
                          "OD_atom_fitted_OD_percent": fs["OD"] / N * 100})
    report.add(
        Check("OD recovered within 3 sigma", fs["OD"], s.od, 3 * fs.error("OD")),
        Check("tau recovered within 3 sigma [ms]", fl["tau"] * 1e3, s.tau_ms, 3 * fl.error("tau") * 1e3),
        Check("atom number within 3 sigma of 1270", N, QUOTED_N, 3 * math.hypot(sN, QUOTED_N_ERR)),
        Check("OD per atom [%]", od_atom * 100, 0.86, 0.1),
    )

    def draw(fig, ax):
        ax.plot(spec.x / 1e6, spec.y, "o", ms=3)
        xx = np.linspace(spec.x.min(), spec.x.max(), 400)
        ax.plot(xx / 1e6, fs.model(xx, *fs.values), "k")
        ax.set_xlabel("detuning (MHz)")
        ax.set_ylabel("transmission")
    _svg(report.file("fig3_spectrum.svg"), draw)


def recipe_fig4(cfg, report, threads=1):
    periods = [p * 1e-6 for p in cfg.scan.periods_um]
    if len(periods) < 3:
        # fail before the expensive part; the U0 fit needs three periods
        raise ValueError("scan.periods_um needs at least 3 lattice periods")
    depth = mK(cfg.trap.depth_mK)
    rows, spectra = [], []
    for d in periods:
        tag = f"_{d * 1e6:.2f}um"
        res, info = stage_dynamics(cfg, report, period=d, threads=threads, tag=tag)
        report.stage = "fit"
        fit = fit_double_gaussian(res.series, dips=True)
        fax, sfax = extract_fax(fit)
        write_json(report.file(f"loss_fit{tag}.json"), fit.to_dict(), _meta(cfg))
        rows.append((d, fax, sfax, info["f_ax_harmonic_Hz"], bool(fit.flags["single_gaussian"]),
                     res.baseline, fit["A1"] / fit.error("A1")))
        spectra.append((d, res.series, fit))
    d_arr = np.array([r[0] for r in rows])
    fax = np.array([r[1] for r in rows])
    sfax = np.array([r[2] for r in rows])
    write_csv(report.file("fax_vs_period.csv"),
              {"d_lat [m]": d_arr, "f_ax [Hz]": fax, "sigma [Hz]": sfax,
               "f_ax_harmonic [Hz]": [r[3] for r in rows]}, _meta(cfg))
    report.stage = "fit"
    series = DataSeries(d_arr, fax, np.maximum(sfax, 1e-3 * fax), "d_lat [m]", "f_ax [Hz]")
    ufit = fit_fax_vs_period(series)
    write_json(report.file("fax_fit.json"), ufit.to_dict(), _meta(cfg))
    # weighted in log space: sigma(ln f) = sigma_f / f
    coef, cov = np.polyfit(np.log(d_arr), np.log(fax), 1, w=fax / series.sigma, cov="unscaled")
    slope, slope_err = float(coef[0]), float(np.sqrt(cov[0, 0]))
    U0 = ufit.flags["U0_mK"]
    report.values.update({
        "periods_um": list(d_arr * 1e6), "f_ax_Hz": list(fax), "f_ax_err_Hz": list(sfax),
        "f_ax_over_harmonic": [r[1] / r[3] for r in rows], "single_gaussian": [r[4] for r in rows],
        # diagnostics only: survival left to lose, and dip amplitude over its error
        "baseline_survival": [r[5] for r in rows], "dip_significance": [r[6] for r in rows],
        "U0_fit_mK": [U0, ufit.flags["U0_mK_err"]],
        "U0_fit_over_programmed": U0 / cfg.trap.depth_mK, "log_log_slope": [slope, slope_err],
    })
    report.add(
        Check("fitted U0 / programmed depth", U0 / cfg.trap.depth_mK, 1.0, 0.10),
        Check("f_ax vs d_lat log-log slope", slope, -1.0, 0.10),
    )
    if any(abs(d - 1e-6) < 1e-9 for d in d_arr):
        i = int(np.argmin(np.abs(d_arr - 1e-6)))
        report.add(Check("f_ax at 1.0 um / harmonic estimate", fax[i] / rows[i][3], 1.0, 0.05))

    def draw_spectra(fig, ax):
        for d, s, fit in spectra:
            line, = ax.plot(s.x / 1e3, s.y, "o", ms=3, label=f"{d * 1e6:.2f} um")
            xx = np.linspace(s.x.min(), s.x.max(), 400)
            ax.plot(xx / 1e3, 1 - fit.model(xx, *fit.values), color=line.get_color(), lw=1)
        ax.set_xlabel("modulation frequency (kHz)")
        ax.set_ylabel("survival")
        ax.legend(fontsize=7)
    _svg(report.file("loss_spectra.svg"), draw_spectra)

    def draw_fax(fig, ax):
        ax.errorbar(d_arr * 1e6, fax / 1e3, sfax / 1e3, fmt="o", mfc="none")
        dd = np.linspace(d_arr.min() * 0.95, d_arr.max() * 1.05, 200)
        ax.plot(dd * 1e6, axial_frequency(dd, ufit["U0"]) / 1e3, "k", label=f"fit {U0:.3f} mK")
        ax.plot(dd * 1e6, axial_frequency(dd, depth) / 1e3, "k--", lw=0.8,
                label=f"programmed {cfg.trap.depth_mK:g} mK")
        ax.set_xlabel("lattice period (um)")
        ax.set_ylabel("f_ax (kHz)")
        ax.legend()
    _svg(report.file("fax_vs_period.svg"), draw_fax)


RECIPES = {"empty": recipe_empty, "fig2": recipe_fig2, "fig3": recipe_fig3, "fig4": recipe_fig4}


def run_pipeline(cfg: ScenarioConfig, recipe="empty", out=None, threads=1) -> Report:
    """Run a recipe, always writing ``summary.json``; stage errors are recorded then re-raised."""
    recipe = recipe or "empty"
    if recipe not in RECIPES:
        raise KeyError(f"unknown recipe {recipe!r}; known: {', '.join(RECIPES)}")
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = Report(recipe, out)
    try:
        RECIPES[recipe](cfg, report, threads=threads)
    except Exception as exc:
        stage = report.stage or recipe
        report.error = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
        write_json(out / "summary.json", report.summary(cfg))
        raise StageError(stage, exc) from exc
    write_json(out / "summary.json", report.summary(cfg))
    return report
