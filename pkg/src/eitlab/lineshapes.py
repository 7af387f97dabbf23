"""Closed-form EIT transmission lineshapes and their widths.

Three limiting models of the probe transmission versus two-photon detuning
``delta`` (rad/s):

* ``lorentzian``  homogeneous three-level EIT,
  ``1 - (gamma_bc Omega^2 + delta^2 gamma^2) / (Omega^4 + delta^2 gamma^2)``
* ``ty``          power broadening averaged over a Gaussian beam,
  ``1 - x arctan(1/x)`` with ``x = delta gamma / Omega^2``
* ``transit``     transit-limited, ``exp(-|delta t_tr|)``

Each returns values in [0, 1] with the asymptote T(inf) = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .physics import AtomGasParams, BeamConfig, mean_thermal_speed

MODELS = ("lorentzian", "ty", "transit")


def eval_lorentzian(delta, rabi_control, gamma, gamma_bc=0.0):
    if rabi_control < 0 or gamma <= 0 or gamma_bc < 0:
        raise ValueError("need rabi_control >= 0, gamma > 0, gamma_bc >= 0")
    d = np.asarray(delta, dtype=float)
    om2 = rabi_control * rabi_control
    dg2 = (d * gamma) ** 2
    den = om2 * om2 + dg2
    if np.any(den == 0):
        raise ValueError("Lorentzian undefined for rabi_control = 0 at delta = 0")
    out = 1.0 - (gamma_bc * om2 + dg2) / den
    return out if out.ndim else float(out)


def eval_ty(delta, rabi_control, gamma):
    if rabi_control <= 0 or gamma <= 0:
        raise ValueError("need rabi_control > 0 and gamma > 0")
    x = np.abs(np.asarray(delta, dtype=float)) * gamma / rabi_control**2
    out = 1.0 - _x_arctan_inv(x)
    return out if out.ndim else float(out)


def _x_arctan_inv(x):
    """x * arctan(1/x) with the x -> 0 limit (0) handled."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    with np.errstate(over="ignore"):
        return np.where(x > 0, x * np.arctan(1.0 / safe), 0.0)


def eval_transit_exponential(delta, transit_time):
    if transit_time <= 0:
        raise ValueError("transit_time must be > 0")
    out = np.exp(-np.abs(np.asarray(delta, dtype=float) * transit_time))
    return out if out.ndim else float(out)


def transit_time(beam: BeamConfig, gas: AtomGasParams) -> float:
    """Average transit time 2r/<v> through the beam (s), r the waist radius."""
    return 2.0 * beam.waist_radius / mean_thermal_speed(gas.atomic_mass, gas.cell_temperature)


@dataclass(frozen=True)
class LineshapeModel:
    """A lineshape with fit scaling, T_fit = baseline + amplitude * T_model.

    ``params`` holds ``rabi_control``, ``gamma`` (and ``gamma_bc``) for the
    Lorentzian, ``rabi_control`` and ``gamma`` for TY, ``transit_time`` for
    the transit exponential.
    """

    kind: str
    params: dict = field(default_factory=dict)
    amplitude: float = 1.0
    baseline: float = 0.0

    def __post_init__(self):
        if self.kind not in MODELS:
            raise ValueError(f"unknown lineshape {self.kind!r}; choose from {MODELS}")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")
        p = self.params
        if self.kind == "transit":
            if p.get("transit_time", 0) <= 0:
                raise ValueError("transit_time must be > 0")
        else:
            if p.get("rabi_control", 0) <= 0 or p.get("gamma", 0) <= 0:
                raise ValueError("rabi_control and gamma must be > 0")
            if p.get("gamma_bc", 0.0) < 0:
                raise ValueError("gamma_bc must be >= 0")

    def shape(self, delta):
        p = self.params
        if self.kind == "lorentzian":
            return eval_lorentzian(delta, p["rabi_control"], p["gamma"], p.get("gamma_bc", 0.0))
        if self.kind == "ty":
            return eval_ty(delta, p["rabi_control"], p["gamma"])
        return eval_transit_exponential(delta, p["transit_time"])

    def __call__(self, delta):
        return self.baseline + self.amplitude * self.shape(delta)

    def analytic_fwhm(self) -> float:
        """Closed-form contrast FWHM (rad/s); TY uses the tabulated root."""
        p = self.params
        if self.kind == "lorentzian":
            return 2.0 * p["rabi_control"] ** 2 / p["gamma"]
        if self.kind == "ty":
            return 2.0 * TY_HALF_WIDTH_ROOT * p["rabi_control"] ** 2 / p["gamma"]
        return 2.0 * math.log(2.0) / p["transit_time"]


def _ty_root() -> float:
    return brentq(lambda x: float(_x_arctan_inv(x)) - 0.5, 1e-3, 10.0, xtol=1e-15, rtol=1e-15)


# x arctan(1/x) = 1/2 at x = 0.4276...; TY FWHM = 2 x Omega^2/gamma.
TY_HALF_WIDTH_ROOT = _ty_root()


def fwhm(model: LineshapeModel, rtol: float = 1e-9) -> float:
    """Full width (rad/s) at half contrast, found by root bracketing.

    Half contrast is the midpoint between T(0) and T(inf); the baseline and
    amplitude of the model drop out.
    """
    peak = float(model.shape(0.0))
    floor = 0.0
    half = 0.5 * (peak + floor)
    if peak <= floor:
        raise ValueError("lineshape has no positive contrast")

    def g(d):
        return float(model.shape(d)) - half

    hi = _initial_scale(model)
    lo = 0.0
    for _ in range(200):
        if g(hi) < 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ValueError("half-contrast point not bracketed")
    # monotone decay is required for a unique crossing
    probe = np.linspace(lo, hi, 33)
    vals = np.asarray(model.shape(probe), dtype=float)
    signs = np.sign(vals - half)
    signs = signs[signs != 0]
    if np.sum(np.diff(signs) != 0) != 1:
        raise ValueError("lineshape is not monotone in |delta|")
    root = brentq(g, lo, hi, xtol=1e-300, rtol=max(rtol, 4 * np.finfo(float).eps), maxiter=500)
    return 2.0 * root


def _initial_scale(model: LineshapeModel) -> float:
    p = model.params
    if model.kind == "transit":
        return 1.0 / p["transit_time"]
    return p["rabi_control"] ** 2 / p["gamma"] * 0.1
