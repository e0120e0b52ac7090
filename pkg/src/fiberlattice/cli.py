"""Command line entry point: ``fiberlattice <subcommand> [options]``.

Exit codes: 0 success (all recipe checks pass), 1 a tolerance check failed,
2 bad input or a stage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, fitkit
from .config import ConfigError, ScenarioConfig
from .io import IngestError, SCHEMAS, ColumnSchema, ingest_csv, write_csv, write_json

log = logging.getLogger("fiberlattice")

FIT_MODELS = {
    "spectrum": ("spectrum", lambda d, a: fitkit.fit_spectrum(d)),
    "saturation": ("saturation", lambda d, a: fitkit.fit_saturation(d)),
    "lifetime": ("lifetime", lambda d, a: fitkit.fit_lifetime(d, floor=a.floor)),
    "double-gaussian": ("loss", lambda d, a: fitkit.fit_double_gaussian(d, dips=a.dips)),
    "fax": ("fax", lambda d, a: fitkit.fit_fax_vs_period(d)),
}


def _config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = str(args.out)
    return cfg


def cmd_mode(args):
    from .pipeline import Report, stage_mode
    cfg = _config(args)
    report = None
    if args.out is not None:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        report = Report("mode", Path(cfg.out))
    mode, info, table = stage_mode(cfg, report)
    w = csv.writer(sys.stdout)
    for k in ("n_eff", "beta_per_m", "kappa_per_m"):
        w.writerow([f"# {k}", repr(info[k])])
    w.writerow(["q", "d_lat [m]"])
    for q, d in table:
        w.writerow([q, repr(d)])
    return 0


def cmd_field(args):
    from .pipeline import Report, stage_field
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _, maxima = stage_field(cfg, Report("field", out), svg=args.svg)
    for m in maxima[:3]:
        print(f"maximum at {m.surface_distance * 1e9:.1f} nm above the surface")
    return 0


def cmd_trap(args):
    from .pipeline import Report, stage_trap
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    period = args.period_um * 1e-6 if args.period_um else None
    _, site, rep = stage_trap(cfg, Report("trap", out), svg=args.svg, period=period)
    print(f"site {rep['surface_distance_m'] * 1e9:.1f} nm above the surface: "
          f"f_ax {site.f_ax / 1e3:.1f} kHz, f_rad {site.f_rad / 1e3:.1f} kHz, "
          f"f_az {site.f_az / 1e3:.1f} kHz, U_eff {rep['U_eff_mK']:.3f} mK")
    return 0


def cmd_dynamics(args):
    from .pipeline import Report, stage_dynamics
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    period = args.period_um * 1e-6 if args.period_um else None
    res, info = stage_dynamics(cfg, Report("dynamics", out), period=period, threads=args.threads)
    print(f"baseline survival {res.baseline:.3f}, minimum {res.series.y.min():.3f} "
          f"at {res.series.x[np.argmin(res.series.y)] / 1e3:.1f} kHz")
    return 0


def cmd_fit(args):
    schema_name, fitter = FIT_MODELS[args.model]
    schema = SCHEMAS[schema_name]
    if args.columns:
        x, y, *s = args.columns.split(",")
        schema = ColumnSchema(x, y, s[0] if s else None, schema.x_unit, schema.y_unit)
    data = ingest_csv(args.data, schema)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", fitkit.FitWarning)
        res = fitter(data, args)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.data).stem
    meta = {"tool": "fiberlattice", "version": __version__, "source": str(args.data),
            "model": args.model}
    payload = res.to_dict()
    payload["warnings"] = [str(w.message) for w in caught]
    write_json(out / f"{stem}_fit.json", payload, meta)
    curve = res.model(data.x, *res.values)
    if args.model == "double-gaussian" and args.dips:
        curve = 1 - curve
    write_csv(out / f"{stem}_curve.csv",
              {data.x_label: data.x, data.y_label: data.y, "model": curve,
               "residual": data.y - curve}, meta)
    for n, v, e in zip(res.names, res.values, res.errors):
        print(f"{n} = {v:.6g} +- {e:.2g}")
    print(f"chi2_red = {res.chi2_red:.3g}")
    return 0


def cmd_pipeline(args):
    from .pipeline import StageError, run_pipeline
    cfg = _config(args)
    t0 = time.perf_counter()
    try:
        report = run_pipeline(cfg, args.recipe, cfg.out, threads=args.threads)
    except StageError as exc:
        print(f"error: {exc} (partial outputs kept in {cfg.out})", file=sys.stderr)
        return 2
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g}")
    log.info("recipe %s finished in %.1f s", report.recipe, time.perf_counter() - t0)
    print(f"summary written to {Path(cfg.out) / 'summary.json'}")
    return 0 if report.passed else 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario TOML file")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="fiberlattice", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fiberlattice {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mode", parents=[common], help="HE11 mode and Bragg periods as CSV")
    s.set_defaults(func=cmd_mode)

    s = sub.add_parser("field", parents=[common], help="intensity maps with a JSON sidecar")
    s.add_argument("--svg", action="store_true", help="also write heatmaps")
    s.set_defaults(func=cmd_field)

    s = sub.add_parser("trap", parents=[common], help="site report and radial cut")
    s.add_argument("--svg", action="store_true")
    s.add_argument("--period-um", type=float, help="lattice period instead of the beam angle")
    s.set_defaults(func=cmd_trap)

    s = sub.add_parser("dynamics", parents=[common], help="parametric loss spectrum")
    s.add_argument("--period-um", type=float, help="lattice period instead of the beam angle")
    s.set_defaults(func=cmd_dynamics)

    s = sub.add_parser("fit", parents=[common], help="fit a CSV data file")
    s.add_argument("--model", required=True, choices=sorted(FIT_MODELS))
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--columns", help="x,y[,sigma] column names overriding the schema")
    s.add_argument("--dips", action="store_true", help="double-gaussian: data are survival dips")
    s.add_argument("--floor", action="store_true", help="lifetime: fit a constant floor")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("pipeline", parents=[common], help="run a figure recipe")
    s.add_argument("--recipe", default="empty", help="empty, fig2, fig3 or fig4")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IngestError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except fitkit.FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
