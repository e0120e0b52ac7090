"""Physical constants, atomic species data and a small dimension-tagged scalar.

Everything internal is SI. Constants come from ``scipy.constants`` (CODATA)
and are re-exported here so that no other module defines its own.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

from scipy import constants as _c

kB = _c.k
h = _c.h
hbar = _c.hbar
c = _c.c
eps0 = _c.epsilon_0
amu = _c.atomic_mass

DIMENSIONS = ("length", "time", "frequency", "energy", "power",
              "temperature", "mass", "dimensionless")


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Quantity:
    """A float with a dimension tag. Only same-dimension +, -, < are allowed."""

    value: float
    dim: str = "dimensionless"

    def __post_init__(self):
        if self.dim not in DIMENSIONS:
            raise DimensionError(f"unknown dimension {self.dim!r}")

    def _check(self, other):
        if not isinstance(other, Quantity):
            if self.dim == "dimensionless":
                return Quantity(float(other))
            raise DimensionError(f"cannot combine {self.dim} with a bare number")
        if other.dim != self.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return other

    def __add__(self, other):
        return Quantity(self.value + self._check(other).value, self.dim)

    __radd__ = __add__

    def __sub__(self, other):
        return Quantity(self.value - self._check(other).value, self.dim)

    def __rsub__(self, other):
        return Quantity(self._check(other).value - self.value, self.dim)

    def __neg__(self):
        return Quantity(-self.value, self.dim)

    def __mul__(self, k):
        if isinstance(k, Quantity):
            if k.dim == "dimensionless":
                return Quantity(self.value * k.value, self.dim)
            if self.dim == "dimensionless":
                return Quantity(self.value * k.value, k.dim)
            raise DimensionError("products of dimensioned quantities are not tracked")
        return Quantity(self.value * k, self.dim)

    __rmul__ = __mul__

    def __truediv__(self, k):
        if isinstance(k, Quantity):
            if k.dim == self.dim:
                return Quantity(self.value / k.value)
            if k.dim == "dimensionless":
                return Quantity(self.value / k.value, self.dim)
            raise DimensionError("quotients of dimensioned quantities are not tracked")
        return Quantity(self.value / k, self.dim)

    def __lt__(self, other):
        return self.value < self._check(other).value

    def __le__(self, other):
        return self.value <= self._check(other).value

    def __gt__(self, other):
        return self.value > self._check(other).value

    def __ge__(self, other):
        return self.value >= self._check(other).value

    def __float__(self):
        return float(self.value)


def _as_value(x, dim):
    if isinstance(x, Quantity):
        if x.dim != dim:
            raise DimensionError(f"expected {dim}, got {x.dim}")
        return x.value
    return float(x)


def energy_from_temperature(T):
    """kB*T in joules. Accepts kelvin or a temperature Quantity."""
    value = _as_value(T, "temperature")
    if value < 0:
        raise ValueError(f"negative temperature {value} K")
    E = kB * value
    return Quantity(E, "energy") if isinstance(T, Quantity) else E


def temperature_from_energy(E):
    value = _as_value(E, "energy")
    if value < 0:
        raise ValueError(f"negative energy {value} J")
    T = value / kB
    return Quantity(T, "temperature") if isinstance(E, Quantity) else T


def mK(x):
    """Energy of kB * x millikelvin."""
    return kB * x * 1e-3


@dataclass(frozen=True)
class AtomSpecies:
    name: str
    mass: float            # kg
    wavelength: float      # resonance wavelength, m
    gamma: float           # natural decay rate, 1/s

    @property
    def photon_energy(self) -> float:
        return h * c / self.wavelength

    @property
    def max_scattered_power(self) -> float:
        """Power radiated by one fully saturated atom, E_ph * Gamma / 2."""
        return self.photon_energy * self.gamma / 2

    @property
    def recoil_energy(self) -> float:
        k = 2 * _c.pi / self.wavelength
        return (hbar * k) ** 2 / (2 * self.mass)

    def to_dict(self) -> dict:
        return asdict(self)


# 85Rb D2 line (Steck). Gamma = 2 pi x 6.0666 MHz.
RB85 = AtomSpecies(
    name="Rb85",
    mass=84.911789738 * amu,
    wavelength=780.241368271e-9,
    gamma=2 * _c.pi * 6.0666e6,
)


def load_species(path) -> AtomSpecies:
    """Read a species from a JSON file with keys name, mass, wavelength, gamma (SI)."""
    data = json.loads(Path(path).read_text())
    missing = {"name", "mass", "wavelength", "gamma"} - set(data)
    if missing:
        raise KeyError(f"species file {path} lacks {sorted(missing)}")
    extra = set(data) - {"name", "mass", "wavelength", "gamma"}
    if extra:
        raise KeyError(f"species file {path} has unknown keys {sorted(extra)}")
    sp = AtomSpecies(str(data["name"]), float(data["mass"]),
                     float(data["wavelength"]), float(data["gamma"]))
    if sp.mass <= 0 or sp.wavelength <= 0 or sp.gamma <= 0:
        raise ValueError("species parameters must be positive")
    return sp


def save_species(species: AtomSpecies, path) -> None:
    Path(path).write_text(json.dumps(species.to_dict(), indent=2))
