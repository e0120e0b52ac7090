"""Scenario configuration: a strict TOML file with unit-suffixed keys.

Example::

    seed = 7
    out = "runs/fig4"

    [fiber]
    radius_nm = 240.0

    [beams]
    wavelength_nm = 780.5
    theta_full_deg = 46.0

    [trap]
    depth_mK = 0.4

    [scan]
    periods_um = [0.88, 1.0, 1.2, 1.5]

Unknown sections or keys are errors. ``ScenarioConfig.to_toml`` writes a file
that parses back to an equal object.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .dynamics import EnsembleConfig, ModulationSpec
from .fibermode import FiberSpec
from .fieldsim import BeamGeometry
from .quantities import RB85, h, kB, load_species
from .trapmodel import TrapConfig


class ConfigError(ValueError):
    pass


_POL = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


@dataclass
class FiberSection:
    radius_nm: float = 240.0
    n1: float = 1.4537
    n2: float = 1.0

    def build(self):
        return FiberSpec(self.radius_nm * 1e-9, self.n1, self.n2)


@dataclass
class BeamSection:
    wavelength_nm: float = 780.5
    theta_full_deg: float = 46.0
    polarization: str = "y"
    amplitudes: list = field(default_factory=lambda: [1.0, 1.0])

    def __post_init__(self):
        if self.polarization not in _POL:
            raise ConfigError(f"polarization must be one of {sorted(_POL)}")
        if len(self.amplitudes) != 2:
            raise ConfigError("amplitudes needs two entries")

    def build(self, period=None):
        if period is not None:
            return BeamGeometry.for_period(period, self.wavelength_nm * 1e-9,
                                           polarization=_POL[self.polarization],
                                           amplitudes=tuple(self.amplitudes))
        return BeamGeometry(self.wavelength_nm * 1e-9, math.radians(self.theta_full_deg),
                            _POL[self.polarization], tuple(self.amplitudes))


@dataclass
class TrapSection:
    depth_mK: float = 0.5
    detuning_GHz: float = -130.0
    C3_kHz_um3: float = 1.2           # C3 / h
    species: str = "Rb85"             # or a path to a species JSON file
    dw_wavenumber: str = "guided"     # "guided" (beta of the mode) or "free" (2 pi / lambda)

    def dw_k(self, beta, wavelength):
        if self.dw_wavenumber not in ("guided", "free"):
            raise ConfigError("dw_wavenumber must be 'guided' or 'free'")
        return beta if self.dw_wavenumber == "guided" else 2 * math.pi / wavelength

    def build(self, depth_mK=None):
        if self.dw_wavenumber not in ("guided", "free"):
            raise ConfigError("dw_wavenumber must be 'guided' or 'free'")
        species = RB85 if self.species == "Rb85" else load_species(self.species)
        d = self.depth_mK if depth_mK is None else depth_mK
        return TrapConfig(depth=kB * d * 1e-3, detuning=2 * math.pi * self.detuning_GHz * 1e9,
                          C3=h * self.C3_kHz_um3 * 1e3 * 1e-18, species=species)


@dataclass
class MapSection:
    half_width_um: float = 1.5
    step_nm: float = 10.0


@dataclass
class EnsembleSection:
    count: int = 500
    temperature_uK: float = 30.0
    site_index: int = 0
    envelope_waist_mm: float = 0.0    # 0 = uniform depth over the illuminated region
    envelope_extent_mm: float = 1.0

    def build(self, seed):
        return EnsembleConfig(self.count, self.temperature_uK * 1e-6, seed, self.site_index,
                              self.envelope_waist_mm * 1e-3, self.envelope_extent_mm * 1e-3)


@dataclass
class ModulationSection:
    epsilon: float = 0.03
    duration_ms: float = 20.0
    distortion: float = 0.05
    readout_depth_mK: float = 0.1
    ramp_ms: float = 1.0
    criterion: str = "energy"
    n_freq: int = 30
    f_lo_over_fax: float = 0.5
    f_hi_over_fax: float = 3.0

    def __post_init__(self):
        if self.criterion not in ("energy", "escape"):
            raise ConfigError("criterion must be 'energy' or 'escape'")
        if self.n_freq < 8:
            raise ConfigError("n_freq must be at least 8 (the loss fit has 7 parameters)")

    def build(self):
        return ModulationSpec(0.0, self.epsilon, self.duration_ms * 1e-3, self.distortion)


@dataclass
class ScanSection:
    periods_um: list = field(default_factory=lambda: [0.88, 1.0, 1.2, 1.5])


@dataclass
class SynthSection:
    """Truth values and noise for the synthetic fit round trips."""
    od: float = 10.9
    gamma_eff_MHz: float = 12.0
    delta_ls_MHz: float = 3.0
    y0: float = 0.0
    spectrum_noise: float = 0.016
    tau_ms: float = 14.7
    lifetime_amplitude: float = 10.9
    lifetime_noise: float = 0.5
    p_abs_max_nW: float = 6.2
    p_sat_pW: float = 400.0
    saturation_noise_pW: float = 195.0


_SECTIONS = {
    "fiber": FiberSection, "beams": BeamSection, "trap": TrapSection, "map": MapSection,
    "ensemble": EnsembleSection, "modulation": ModulationSection, "scan": ScanSection,
    "synth": SynthSection,
}


@dataclass
class ScenarioConfig:
    seed: int = 0
    out: str = "out"
    fiber: FiberSection = field(default_factory=FiberSection)
    beams: BeamSection = field(default_factory=BeamSection)
    trap: TrapSection = field(default_factory=TrapSection)
    map: MapSection = field(default_factory=MapSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    modulation: ModulationSection = field(default_factory=ModulationSection)
    scan: ScanSection = field(default_factory=ScanSection)
    synth: SynthSection = field(default_factory=SynthSection)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        kw = {}
        for key in ("seed", "out"):
            if key in data:
                kw[key] = data.pop(key)
        for name, sec in _SECTIONS.items():
            if name in data:
                kw[name] = _section(sec, name, data.pop(name))
        if data:
            raise ConfigError(f"unknown top-level keys: {', '.join(sorted(data))}")
        if not isinstance(kw.get("seed", 0), int):
            raise ConfigError("seed must be an integer")
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, "rb") as fh:
            try:
                data = tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path):
        Path(path).write_text(self.to_toml())

    def digest(self) -> str:
        """Hash of the scenario; the output location is not part of it."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self):
        """Build every engine object once so bad values fail at load time."""
        try:
            self.fiber.build()
            self.beams.build()
            self.trap.build()
            self.ensemble.build(self.seed)
            self.modulation.build()
            for p in self.scan.periods_um:
                if not p > 0:
                    raise ValueError("lattice periods must be positive")
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from None


def _section(cls, name, values):
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
    kw = {}
    for key, val in values.items():
        default = known[key].default
        if default is dataclasses.MISSING:
            default = known[key].default_factory()
        if isinstance(default, bool) or isinstance(val, bool):
            ok = isinstance(val, type(default))
        elif isinstance(default, float):
            ok = isinstance(val, (int, float))
            val = float(val) if ok else val
        elif isinstance(default, list):
            ok = isinstance(val, list) and all(isinstance(v, (int, float)) for v in val)
            val = [float(v) for v in val] if ok else val
        else:
            ok = isinstance(val, type(default))
        if not ok:
            raise ConfigError(f"[{name}] {key}: expected {type(default).__name__}, got {val!r}")
        kw[key] = val
    try:
        return cls(**kw)
    except ConfigError as exc:
        raise ConfigError(f"[{name}] {exc}") from None
