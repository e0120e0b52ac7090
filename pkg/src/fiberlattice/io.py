"""CSV ingestion with unit-tagged headers, and output writers with metadata headers."""
from __future__ import annotations

import csv
import json
import logging
import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .fitkit import DataSeries

log = logging.getLogger(__name__)

# unit -> (dimension, factor to SI)
UNITS = {
    "": ("1", 1.0), "1": ("1", 1.0), "%": ("1", 1e-2),
    "Hz": ("Hz", 1.0), "kHz": ("Hz", 1e3), "MHz": ("Hz", 1e6), "GHz": ("Hz", 1e9),
    "s": ("s", 1.0), "ms": ("s", 1e-3), "us": ("s", 1e-6), "ns": ("s", 1e-9),
    "W": ("W", 1.0), "mW": ("W", 1e-3), "uW": ("W", 1e-6), "nW": ("W", 1e-9), "pW": ("W", 1e-12),
    "m": ("m", 1.0), "mm": ("m", 1e-3), "um": ("m", 1e-6), "nm": ("m", 1e-9),
    "K": ("K", 1.0), "mK": ("K", 1e-3), "uK": ("K", 1e-6),
}

_HEADER = re.compile(r"^\s*([^\[\(]+?)\s*(?:[\[\(]\s*([^\]\)]*?)\s*[\]\)])?\s*$")


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSchema:
    """Expected columns; values are converted to ``*_unit`` (SI by default)."""
    x: str
    y: str
    sigma: str | None = None
    x_unit: str = ""
    y_unit: str = ""

    def __post_init__(self):
        for u in (self.x_unit, self.y_unit):
            if u not in UNITS:
                raise ValueError(f"unknown unit {u!r}")


SCHEMAS = {
    "spectrum": ColumnSchema("detuning", "transmission", "sigma", "Hz", ""),
    "saturation": ColumnSchema("p_in", "p_abs", "sigma", "W", "W"),
    "lifetime": ColumnSchema("hold_time", "od", "sigma", "s", ""),
    "loss": ColumnSchema("f_mod", "survival", "stderr", "Hz", ""),
    "fax": ColumnSchema("d_lat", "f_ax", "sigma", "m", "Hz"),
    "xy": ColumnSchema("x", "y", "sigma", "", ""),
}


def parse_header(cell):
    m = _HEADER.match(cell)
    if not m:
        raise IngestError(f"cannot parse header cell {cell!r}")
    unit = m.group(2) or ""
    unit = unit.replace("µ", "u").replace("μ", "u")
    if unit not in UNITS:
        raise IngestError(f"unknown unit {unit!r} in header {cell!r}")
    return m.group(1).strip().lower(), unit


def convert(values, src, dst):
    ds, fs = UNITS[src]
    dd, fd = UNITS[dst]
    if ds != dd:
        raise IngestError(f"unit mismatch: column in {src or 'dimensionless'}, "
                          f"expected {dst or 'dimensionless'}")
    return np.asarray(values, dtype=float) * (fs / fd)


def ingest_csv(path, schema: ColumnSchema | str) -> DataSeries:
    """Read a CSV whose first non-comment row is a header like ``detuning [MHz]``.

    Lines starting with '#' are metadata and skipped silently; blank lines are
    skipped with a warning. Errors carry 1-based line numbers.
    """
    if isinstance(schema, str):
        try:
            schema = SCHEMAS[schema]
        except KeyError:
            raise IngestError(f"unknown schema {schema!r}; known: {', '.join(SCHEMAS)}") from None
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    header, rows, blank = None, [], 0
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.lstrip().startswith("#"):
                continue
            if not line.strip():
                blank += 1
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = [parse_header(c) for c in cells]
                continue
            if len(cells) != len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}")
            try:
                rows.append((lineno, [float(c) for c in cells]))
            except ValueError:
                bad = next(c for c in cells if not _is_float(c))
                raise IngestError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    if header is None:
        raise IngestError(f"{path}: no header row")
    if blank:
        warnings.warn(f"{path}: skipped {blank} blank line(s)", UserWarning)
    names = [n for n, _ in header]
    cols = {}
    for want, unit in ((schema.x, schema.x_unit), (schema.y, schema.y_unit)):
        if want not in names:
            raise IngestError(f"{path}: missing column {want!r} (have {', '.join(names)})")
    if not rows:
        raise IngestError(f"{path}: no data rows")
    data = np.array([r for _, r in rows])
    lines = np.array([ln for ln, _ in rows])
    for want, unit in ((schema.x, schema.x_unit), (schema.y, schema.y_unit)):
        i = names.index(want)
        cols[want] = convert(data[:, i], header[i][1], unit)
    sigma = None
    if schema.sigma and schema.sigma in names:
        i = names.index(schema.sigma)
        sigma = convert(data[:, i], header[i][1], schema.y_unit)
        if np.any(sigma <= 0):
            raise IngestError(f"{path}:{lines[np.argmax(sigma <= 0)]}: sigma must be positive")
    x = cols[schema.x]
    order = np.argsort(x, kind="stable")
    dup = np.nonzero(np.diff(x[order]) <= 1e-12 * np.maximum(1.0, np.abs(x[order][1:])))[0]
    if dup.size:
        a, b = lines[order[dup[0]]], lines[order[dup[0] + 1]]
        raise IngestError(f"{path}: duplicate x value on lines {a} and {b}")
    return DataSeries(x, cols[schema.y], sigma, f"{schema.x} [{schema.x_unit}]",
                      f"{schema.y} [{schema.y_unit}]")


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def metadata(config_digest=None, **extra):
    meta = {"tool": "fiberlattice", "version": __version__}
    if config_digest:
        meta["config_hash"] = config_digest
    meta.update(extra)
    return meta


def write_csv(path, columns: dict, meta: dict | None = None):
    """Columns as {header: array}; metadata goes into leading '# key: value' lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = [np.asarray(v, dtype=float).ravel() for v in columns.values()]
    n = {a.size for a in arrays}
    if len(n) != 1:
        raise ValueError("columns differ in length")
    with path.open("w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh)
        w.writerow(list(columns))
        for row in zip(*arrays):
            w.writerow([repr(float(v)) for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"metadata": meta, **obj} if meta is not None else obj
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path
