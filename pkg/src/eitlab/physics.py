"""Shared physical parameters, unit conventions and experiment configuration.

All angular frequencies are kept in rad/s internally.  Anything that crosses
the package boundary (JSON config, CSV, CLI flags, reports) is expressed in
cyclic Hz; :func:`hz_to_rad` / :func:`rad_to_hz` are the only conversions.

Lengths are in cm, magnetic fields in G, times in s.
"""
from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import constants

TWO_PI = 2.0 * math.pi

RB87_MASS = 1.443e-25  # kg

# Lowest-diffusion-mode constant: tau_D = KAPPA * w**2 / D.  Calibrated once so
# that w = 0.04 cm, D = 35.7 cm^2/s gives 1/(pi tau_D) = 26 kHz, then frozen.
DIFFUSION_MODE_CONSTANT = 35.7 / (math.pi * 26.0e3 * 0.04**2)

WEAK_PROBE_RATIO = 0.2


class ConfigError(ValueError):
    """Invalid configuration value; the message names the field and bound."""


class WeakProbeWarning(UserWarning):
    pass


def hz_to_rad(f):
    """Cyclic frequency (Hz) to angular frequency (rad/s)."""
    return TWO_PI * np.asarray(f, dtype=float) if np.ndim(f) else TWO_PI * float(f)


def rad_to_hz(omega):
    """Angular frequency (rad/s) to cyclic frequency (Hz)."""
    return np.asarray(omega, dtype=float) / TWO_PI if np.ndim(omega) else float(omega) / TWO_PI


def _require(cond: bool, name: str, bound: str, value) -> None:
    if not cond:
        raise ConfigError(f"{name} must be {bound} (got {value!r})")


@dataclass(frozen=True)
class AtomGasParams:
    """Alkali atoms in a buffer gas."""

    diffusion_coefficient: float  # cm^2/s
    atomic_mass: float = RB87_MASS  # kg
    cell_temperature: float = 318.15  # K
    gyromagnetic_ratio: float = 1.4e6  # Hz/G, F=1,m=1 <-> F=2,m=1 coherence

    def __post_init__(self):
        # D == 0 is allowed for pinned-atom studies; negative is not.
        _require(self.diffusion_coefficient >= 0, "gas.diffusion_coefficient", ">= 0", self.diffusion_coefficient)
        _require(self.atomic_mass > 0, "gas.atomic_mass", "> 0", self.atomic_mass)
        _require(self.cell_temperature > 0, "gas.cell_temperature", "> 0", self.cell_temperature)
        _require(self.gyromagnetic_ratio > 0, "gas.gyromagnetic_ratio", "> 0", self.gyromagnetic_ratio)


@dataclass(frozen=True)
class CellGeometry:
    length: float = 7.0  # cm
    radius: float = 1.25  # cm

    def __post_init__(self):
        _require(self.length > 0, "cell.length", "> 0", self.length)
        _require(self.radius > 0, "cell.radius", "> 0", self.radius)


@dataclass(frozen=True)
class BeamConfig:
    """Gaussian beam, ``waist_radius`` is the 1/e^2 intensity radius."""

    waist_radius: float = 0.04  # cm
    total_power: float = 20e-6  # W

    def __post_init__(self):
        _require(self.waist_radius > 0, "beam.waist_radius", "> 0", self.waist_radius)
        _require(self.total_power >= 0, "beam.total_power", ">= 0", self.total_power)

    @property
    def peak_intensity(self) -> float:
        """I0 in W/cm^2."""
        return 2.0 * self.total_power / (math.pi * self.waist_radius**2)

    def profile(self, r):
        """Relative intensity I(r)/I0 = exp(-2 r^2 / w^2)."""
        r = np.asarray(r, dtype=float)
        return np.exp(-2.0 * r * r / self.waist_radius**2)

    def intensity(self, r):
        return self.peak_intensity * self.profile(r)


@dataclass(frozen=True)
class OpticalParams:
    """Rates of the Lambda system, all in rad/s."""

    rabi_control: float
    gamma: float
    gamma_bc: float = 0.0
    rabi_probe: float = 0.0

    def __post_init__(self):
        _require(self.rabi_control >= 0, "optics.rabi_control", ">= 0", self.rabi_control)
        _require(self.rabi_probe >= 0, "optics.rabi_probe", ">= 0", self.rabi_probe)
        _require(self.gamma > 0, "optics.gamma", "> 0", self.gamma)
        _require(self.gamma_bc >= 0, "optics.gamma_bc", ">= 0", self.gamma_bc)
        if self.rabi_probe > WEAK_PROBE_RATIO * self.rabi_control:
            warnings.warn(
                f"probe Rabi frequency exceeds {WEAK_PROBE_RATIO} x control; weak-probe model is stretched",
                WeakProbeWarning,
                stacklevel=3,
            )

    @property
    def pump_rate(self) -> float:
        """Power-broadening rate Omega_C^2 / gamma at beam center."""
        return self.rabi_control**2 / self.gamma


@dataclass(frozen=True)
class MagneticConfig:
    bias: float = 0.0  # G
    gradient: float = 0.0  # dBz/dx, G/cm

    def __post_init__(self):
        _require(self.bias >= 0, "magnetics.bias", ">= 0", self.bias)

    @property
    def transverse_gradient(self) -> float:
        """dBx/dz, equal to dBz/dx for a curl-free field."""
        return self.gradient


@dataclass(frozen=True)
class ExperimentConfig:
    gas: AtomGasParams
    optics: OpticalParams
    cell: CellGeometry = field(default_factory=CellGeometry)
    beam: BeamConfig = field(default_factory=BeamConfig)
    magnetics: MagneticConfig = field(default_factory=MagneticConfig)

    def __post_init__(self):
        _require(
            self.cell.radius > self.beam.waist_radius,
            "cell.radius",
            f"> beam.waist_radius ({self.beam.waist_radius})",
            self.cell.radius,
        )

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with whole sections, section field dicts or dotted fields replaced.

        >>> cfg.replace(optics={"gamma_bc": 100.0}, **{"magnetics.gradient": 0.004})
        """
        parts = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for key, value in sections.items():
            if "." in key:
                sec, name = key.split(".", 1)
                parts[sec] = dataclasses.replace(parts[sec], **{name: value})
            elif isinstance(value, dict):
                parts[key] = dataclasses.replace(parts[key], **value)
            else:
                parts[key] = value
        return ExperimentConfig(**parts)

    def with_power(self, factor: float) -> "ExperimentConfig":
        """Scale the laser power; Rabi frequencies scale with its square root."""
        if factor <= 0:
            raise ConfigError(f"power factor must be > 0 (got {factor!r})")
        s = math.sqrt(factor)
        return self.replace(
            beam=dataclasses.replace(self.beam, total_power=self.beam.total_power * factor),
            optics=dataclasses.replace(
                self.optics, rabi_control=self.optics.rabi_control * s, rabi_probe=self.optics.rabi_probe * s
            ),
        )

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {
            "gas": {
                "diffusion_coefficient": self.gas.diffusion_coefficient,
                "atomic_mass": self.gas.atomic_mass,
                "cell_temperature": self.gas.cell_temperature,
                "gyromagnetic_ratio": self.gas.gyromagnetic_ratio,
            },
            "cell": {"length": self.cell.length, "radius": self.cell.radius},
            "beam": {"waist_radius": self.beam.waist_radius, "total_power": self.beam.total_power},
            "optics": {
                "rabi_control_hz": rad_to_hz(self.optics.rabi_control),
                "rabi_probe_hz": rad_to_hz(self.optics.rabi_probe),
                "gamma_hz": rad_to_hz(self.optics.gamma),
                "gamma_bc_hz": rad_to_hz(self.optics.gamma_bc),
            },
            "magnetics": {"bias": self.magnetics.bias, "gradient": self.magnetics.gradient},
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        """Build from the JSON document layout; unknown keys are rejected."""
        sections = {"gas", "cell", "beam", "optics", "magnetics"}
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        extra = set(doc) - sections
        if extra:
            raise ConfigError(f"unknown configuration section(s): {', '.join(sorted(extra))}")
        for required in ("gas", "optics"):
            if required not in doc:
                raise ConfigError(f"missing configuration section: {required}")

        def take(name: str, allowed: set[str]) -> dict[str, float]:
            sec = doc.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name} must be an object")
            bad = set(sec) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in {name}: {', '.join(f'{name}.{k}' for k in sorted(bad))}")
            out = {}
            for k, v in sec.items():
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                    raise ConfigError(f"{name}.{k} must be a finite number (got {v!r})")
                out[k] = float(v)
            return out

        gas = take("gas", {"diffusion_coefficient", "atomic_mass", "cell_temperature", "gyromagnetic_ratio"})
        if "diffusion_coefficient" not in gas:
            raise ConfigError("missing gas.diffusion_coefficient")
        optics = take("optics", {"rabi_control_hz", "rabi_probe_hz", "gamma_hz", "gamma_bc_hz"})
        for k in ("rabi_control_hz", "gamma_hz"):
            if k not in optics:
                raise ConfigError(f"missing optics.{k}")
        return cls(
            gas=AtomGasParams(**gas),
            cell=CellGeometry(**take("cell", {"length", "radius"})),
            beam=BeamConfig(**take("beam", {"waist_radius", "total_power"})),
            optics=OpticalParams(
                rabi_control=hz_to_rad(optics["rabi_control_hz"]),
                gamma=hz_to_rad(optics["gamma_hz"]),
                gamma_bc=hz_to_rad(optics.get("gamma_bc_hz", 0.0)),
                rabi_probe=hz_to_rad(optics.get("rabi_probe_hz", 0.0)),
            ),
            magnetics=MagneticConfig(**take("magnetics", {"bias", "gradient"})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)


# Control Rabi frequency at the 20 uW reference power.  With the
# pressure-broadened excited-state widths below it gives a center pumping
# rate of ~3e3 s^-1 (5 Torr) and ~1.5e3 s^-1 (100 Torr).
_RABI_CONTROL_20UW = math.sqrt(3.0e3 * TWO_PI * 300e6)
_GAMMA_BC_DEFAULT = TWO_PI * 20.0
# Ground-state relaxation (s^-1) for which the Monte-Carlo central peak of
# the 5 Torr cell is 600 Hz wide (30000 trajectories, default seed).
STORAGE_GAMMA_BC = 466.0


def _preset(diffusion: float, temperature: float, gamma_hz: float, gamma_bc: float, bias: float) -> ExperimentConfig:
    return ExperimentConfig(
        gas=AtomGasParams(diffusion_coefficient=diffusion, cell_temperature=temperature),
        optics=OpticalParams(rabi_control=_RABI_CONTROL_20UW, gamma=TWO_PI * gamma_hz, gamma_bc=gamma_bc),
        beam=BeamConfig(waist_radius=0.04, total_power=20e-6),
        cell=CellGeometry(),
        magnetics=MagneticConfig(bias=bias, gradient=0.0),
    )


def preset(name: str) -> ExperimentConfig:
    """Named configurations.

    ``ne5torr``   5 Torr Ne, 45 C, D = 35.7 cm^2/s
    ``ne100torr`` 100 Torr Ne, 55 C, D = 1.78 cm^2/s
    ``storage``   5 Torr Ne cell at 65 C with the stored-light gamma_bc
    """
    if name == "ne5torr":
        return _preset(35.7, 318.15, 300e6, _GAMMA_BC_DEFAULT, 0.080)
    if name == "ne100torr":
        return _preset(1.78, 328.15, 600e6, _GAMMA_BC_DEFAULT, 0.080)
    if name == "storage":
        return _preset(35.7, 338.15, 300e6, STORAGE_GAMMA_BC, 0.0)
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("ne5torr", "ne100torr", "storage")


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a JSON configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return ExperimentConfig.from_json(text)


def mean_thermal_speed(mass: float, temperature: float) -> float:
    """Mean thermal speed sqrt(8 k T / (pi m)) in cm/s."""
    if not (mass > 0 and temperature > 0):
        raise ValueError(f"mass and temperature must be positive (got {mass!r}, {temperature!r})")
    return 100.0 * math.sqrt(8.0 * constants.k * temperature / (math.pi * mass))


def diffusion_time(config: ExperimentConfig) -> float:
    """Lowest-mode diffusion time across the beam, tau_D (s)."""
    D = config.gas.diffusion_coefficient
    if D <= 0:
        raise ValueError("diffusion time needs D > 0")
    return DIFFUSION_MODE_CONSTANT * config.beam.waist_radius**2 / D


def single_pass_diffusion_linewidth(config: ExperimentConfig) -> float:
    """Naive EIT linewidth 1/(pi tau_D) in Hz."""
    return 1.0 / (math.pi * diffusion_time(config))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Transmission samples on a strictly increasing detuning grid (rad/s)."""

    detunings: np.ndarray
    transmissions: np.ndarray
    source: str = "closed-form"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.detunings, dtype=float)
        t = np.asarray(self.transmissions, dtype=float)
        if d.ndim != 1 or t.shape != d.shape:
            raise ValueError("detunings and transmissions must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(t))):
            raise ValueError("spectrum contains non-finite values")
        if d.size > 1 and np.any(np.diff(d) <= 0):
            raise ValueError("detunings must be strictly increasing")
        object.__setattr__(self, "detunings", d)
        object.__setattr__(self, "transmissions", t)

    def __len__(self):
        return self.detunings.size

    @property
    def detunings_hz(self) -> np.ndarray:
        return rad_to_hz(self.detunings)

    @classmethod
    def from_hz(cls, detunings_hz, transmissions, **kw) -> "Spectrum":
        return cls(hz_to_rad(np.asarray(detunings_hz, dtype=float)), transmissions, **kw)

    def scaled(self, factor: float) -> "Spectrum":
        return Spectrum(self.detunings, self.transmissions * factor, self.source, dict(self.metadata))
