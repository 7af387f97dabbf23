"""Least-squares fitting of spectra to the closed-form lineshapes.

The solver is a bounded Levenberg-Marquardt iteration with a forward-difference
Jacobian, Marquardt diagonal scaling and projection onto the parameter box.
A step is accepted only if it lowers the cost, so the recorded cost history is
non-increasing.

Degeneracies: every lineshape width depends on ``rabi_control**2 / gamma``
only, so ``gamma`` is held fixed by default.  In the Lorentzian, ``gamma_bc``
only rescales the contrast and trades off exactly against ``amplitude``; it is
fixed at 0 by default.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lineshapes import MODELS, TY_HALF_WIDTH_ROOT, LineshapeModel, _x_arctan_inv
from .physics import TWO_PI, Spectrum

DEFAULT_GAMMA = TWO_PI * 300e6
MAX_ITER = 500
FTOL = 1e-10
RANK_TOL = 1e-5

SHAPE_PARAMS = {
    "lorentzian": ("rabi_control", "gamma", "gamma_bc"),
    "ty": ("rabi_control", "gamma"),
    "transit": ("transit_time",),
}
DEFAULT_BOUNDS = {
    "amplitude": (0.0, math.inf),
    "baseline": (-math.inf, math.inf),
    "rabi_control": (1e-12, math.inf),
    "gamma": (1e-12, math.inf),
    "gamma_bc": (0.0, math.inf),
    "transit_time": (1e-15, math.inf),
}


class FitInputError(ValueError):
    pass


class PeakResolutionWarning(UserWarning):
    pass


@dataclass
class FitResult:
    """Outcome of one least-squares fit.

    ``params`` holds every model parameter (free and fixed); ``stderr`` only
    the free ones.  ``residuals`` are data minus model.
    """

    model: str
    params: dict
    stderr: dict
    rms: float
    residuals: np.ndarray = field(repr=False)
    converged: bool
    iterations: int
    free: tuple = ()
    message: str = ""
    cost_history: list = field(default_factory=list, repr=False)

    @property
    def normalized_rms(self) -> float:
        """RMS residual relative to the fitted contrast amplitude."""
        a = self.params.get("amplitude", 0.0)
        return self.rms / a if a > 0 else math.inf

    def lineshape(self) -> LineshapeModel:
        p = dict(self.params)
        amp, base = p.pop("amplitude"), p.pop("baseline")
        return LineshapeModel(self.model, p, amplitude=amp, baseline=base)

    def __call__(self, delta):
        return _model_values(self.model, self.params, np.asarray(delta, dtype=float))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {k: float(v) for k, v in self.params.items()},
            "stderr": {k: float(v) for k, v in self.stderr.items()},
            "free": list(self.free),
            "rms": float(self.rms),
            "normalized_rms": float(self.normalized_rms),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "message": self.message,
        }


def _model_values(model, params, delta):
    shape_kw = {k: params[k] for k in SHAPE_PARAMS[model] if k in params}
    if model == "lorentzian":
        om2 = shape_kw["rabi_control"] ** 2
        dg2 = (delta * shape_kw["gamma"]) ** 2
        shape = (om2 * om2 - shape_kw.get("gamma_bc", 0.0) * om2) / (om2 * om2 + dg2)
    elif model == "ty":
        shape = 1.0 - _x_arctan_inv(np.abs(delta) * shape_kw["gamma"] / shape_kw["rabi_control"] ** 2)
    else:
        shape = np.exp(-np.abs(delta * shape_kw["transit_time"]))
    return params["baseline"] + params["amplitude"] * shape


@dataclass
class _LMOutcome:
    x: np.ndarray
    cost: float
    residuals: np.ndarray
    jac: np.ndarray
    converged: bool
    iterations: int
    message: str
    history: list


def _jacobian(fun, x, r, lo, hi, typical):
    J = np.empty((r.size, x.size))
    for j in range(x.size):
        h = 1e-7 * max(abs(x[j]), typical[j])
        xp = x.copy()
        if x[j] + h > hi[j]:
            h = -h
        xp[j] = x[j] + h
        J[:, j] = (fun(xp) - r) / h
    return J


def levenberg_marquardt(fun, x0, lower, upper, max_iter=MAX_ITER, ftol=FTOL):
    """Minimize ``0.5 * sum(fun(x)**2)`` inside the box ``[lower, upper]``.

    Stops when an accepted step changes the cost by less than ``ftol``
    relative, when no damping level yields a decrease, or after ``max_iter``
    iterations.  A rank-deficient Jacobian at the optimum is reported as
    non-convergence with the best point returned.
    """
    x = np.asarray(x0, dtype=float).copy()
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    typical = np.where(np.abs(x) > 0, np.abs(x), 1.0)
    r = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise FitInputError("model is not finite at the initial guess")
    cost = 0.5 * float(r @ r)
    history = [cost]
    scale0 = max(cost, 1e-300)
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    J = _jacobian(fun, x, r, lo, hi, typical)
    for it in range(1, max_iter + 1):
        if cost <= 1e-32 * scale0 or cost == 0.0:
            converged, message = True, "zero residual"
            break
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1e-300
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 4.0
                continue
            x_new = np.clip(x + step, lo, hi)
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if cost_new < cost:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        rel = (cost - cost_new) / cost
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 3.0, 1e-12)
        J = _jacobian(fun, x, r, lo, hi, typical)
        if rel < ftol:
            converged, message = True, "relative cost change below tolerance"
            break
    norms = np.linalg.norm(J, axis=0)
    if np.any(norms == 0):
        converged, message = False, "degenerate Jacobian"
    else:
        # finite-difference columns carry ~1e-7 relative noise, so exact rank is meaningless
        sv = np.linalg.svd(J / norms, compute_uv=False)
        if sv[-1] < RANK_TOL * sv[0]:
            converged, message = False, "degenerate Jacobian"
    return _LMOutcome(x, cost, r, J, converged, it, message, history)


def _wings(delta, trans):
    n = max(2, delta.size // 50)
    order = np.argsort(delta)
    t = trans[order]
    return min(float(np.mean(t[:n])), float(np.mean(t[-n:])))


def coarse_hwhm(delta, trans):
    """Largest |delta| whose transmission is above the half-contrast level."""
    delta = np.asarray(delta, dtype=float)
    trans = np.asarray(trans, dtype=float)
    base = _wings(delta, trans)
    half = base + 0.5 * (trans.max() - base)
    above = np.abs(delta[trans > half])
    hw = float(above.max()) if above.size else 0.0
    if hw <= 0:
        step = np.min(np.diff(np.sort(delta)))
        hw = 0.5 * step
    return hw


def initial_guess(spectrum: Spectrum, model: str, gamma: float = DEFAULT_GAMMA) -> dict:
    """Automated start: baseline from the wings, amplitude from the contrast,
    width from the coarse half-maximum."""
    d, t = spectrum.detunings, spectrum.transmissions
    base = _wings(d, t)
    amp = max(float(t.max()) - base, 1e-12)
    hw = coarse_hwhm(d, t)
    guess = {"amplitude": amp, "baseline": base}
    if model == "lorentzian":
        guess.update(rabi_control=math.sqrt(hw * gamma), gamma=gamma, gamma_bc=0.0)
    elif model == "ty":
        guess.update(rabi_control=math.sqrt(hw * gamma / TY_HALF_WIDTH_ROOT), gamma=gamma)
    elif model == "transit":
        guess.update(transit_time=math.log(2.0) / hw)
    else:
        raise FitInputError(f"unknown model {model!r}; choose from {MODELS}")
    return guess


def _default_free(model):
    return {"lorentzian": ("amplitude", "baseline", "rabi_control"),
            "ty": ("amplitude", "baseline", "rabi_control"),
            "transit": ("amplitude", "baseline", "transit_time")}[model]


def fit(
    spectrum: Spectrum,
    model: str,
    initial: dict | None = None,
    bounds: dict | None = None,
    free=None,
    gamma: float = DEFAULT_GAMMA,
) -> FitResult:
    """Fit ``baseline + amplitude * T_model(delta)`` to a spectrum.

    Parameters
    ----------
    initial : dict, optional
        Starting values; missing entries come from :func:`initial_guess`.
        Parameters not listed in ``free`` stay at these values.
    bounds : dict, optional
        ``{name: (lo, hi)}`` overriding :data:`DEFAULT_BOUNDS`.
    free : sequence of str, optional
        Parameters to vary.  Defaults to amplitude, baseline and the width
        parameter (``rabi_control`` or ``transit_time``).

    Raises
    ------
    FitInputError
        Unknown model or parameter, too few points, non-finite data, or an
        initial value outside its bounds.
    """
    if model not in MODELS:
        raise FitInputError(f"unknown model {model!r}; choose from {MODELS}")
    d = np.asarray(spectrum.detunings, dtype=float)
    t = np.asarray(spectrum.transmissions, dtype=float)
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(t))):
        raise FitInputError("spectrum contains non-finite values")
    params = initial_guess(spectrum, model, gamma)
    known = ("amplitude", "baseline") + SHAPE_PARAMS[model]
    for k, v in (initial or {}).items():
        if k not in known:
            raise FitInputError(f"parameter {k!r} does not belong to model {model!r}")
        params[k] = float(v)
    free = tuple(free) if free is not None else _default_free(model)
    for k in free:
        if k not in known:
            raise FitInputError(f"free parameter {k!r} does not belong to model {model!r}")
    if d.size < 3 * len(free):
        raise FitInputError(f"need at least {3 * len(free)} points for {len(free)} free parameters, got {d.size}")
    bnd = dict(DEFAULT_BOUNDS)
    for k, v in (bounds or {}).items():
        if k not in known:
            raise FitInputError(f"bound for unknown parameter {k!r}")
        bnd[k] = (float(v[0]), float(v[1]))
    for k in known:
        lo, hi = bnd[k]
        if not lo <= params[k] <= hi:
            raise FitInputError(f"initial {k} = {params[k]:g} outside bounds [{lo:g}, {hi:g}]")

    def residual(x):
        p = dict(params)
        p.update(zip(free, x))
        return _model_values(model, p, d) - t

    x0 = np.array([params[k] for k in free])
    lo = np.array([bnd[k][0] for k in free])
    hi = np.array([bnd[k][1] for k in free])
    out = levenberg_marquardt(residual, x0, lo, hi)
    best = dict(params)
    best.update(zip(free, out.x))
    dof = max(d.size - len(free), 1)
    s2 = 2.0 * out.cost / dof
    norms = np.linalg.norm(out.jac, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    Jn = out.jac / norms
    cov = np.linalg.pinv(Jn.T @ Jn) / np.outer(norms, norms) * s2
    stderr = {k: float(math.sqrt(max(cov[i, i], 0.0))) for i, k in enumerate(free)}
    return FitResult(
        model=model,
        params={k: float(v) for k, v in best.items()},
        stderr=stderr,
        rms=math.sqrt(2.0 * out.cost / d.size),
        residuals=-out.residuals,
        converged=out.converged,
        iterations=out.iterations,
        free=free,
        message=out.message,
        cost_history=out.history,
    )


def compare_models(spectrum: Spectrum, models=MODELS, gamma: float = DEFAULT_GAMMA) -> list[FitResult]:
    """Fit each model from automated guesses and rank by RMS (best first).

    A model that fails outright is kept in the list with infinite RMS.
    """
    results = []
    for m in models:
        try:
            results.append(fit(spectrum, m, gamma=gamma))
        except (FitInputError, FloatingPointError, np.linalg.LinAlgError) as exc:
            results.append(FitResult(m, {}, {}, math.inf, np.full(spectrum.detunings.size, np.nan), False, 0, message=str(exc)))
    return sorted(results, key=lambda r: r.rms)


def _ty_unit(f, width):
    return 1.0 - _x_arctan_inv(np.abs(f) / width)


def _lorentz_unit(f, width):
    return 1.0 / (1.0 + (f / width) ** 2)


def half_max_width(f, excess):
    """FWHM of a central bump by linear interpolation of the half-maximum crossings."""
    c = int(np.argmin(np.abs(f)))
    top = excess[c]
    if not top > 0:
        return None
    half = 0.5 * top
    j = c
    while j < f.size - 1 and excess[j] > half:
        j += 1
    if excess[j] > half:
        return None
    right = f[j - 1] + (half - excess[j - 1]) * (f[j] - f[j - 1]) / (excess[j] - excess[j - 1])
    j = c
    while j > 0 and excess[j] > half:
        j -= 1
    if excess[j] > half:
        return None
    left = f[j + 1] + (half - excess[j + 1]) * (f[j] - f[j + 1]) / (excess[j] - excess[j + 1])
    return float(right - left)


@dataclass
class PeakWidthResult:
    width_hz: float | None
    pedestal: dict
    excess: np.ndarray = field(repr=False)
    points_inside: int = 0


def central_peak_analysis(spectrum: Spectrum) -> PeakWidthResult:
    """Pedestal fit and central-excess width; see :func:`central_peak_width`."""
    order = np.argsort(spectrum.detunings)
    f = spectrum.detunings[order] / TWO_PI
    t = spectrum.transmissions[order]
    base = _wings(f, t)
    amp = float(t.max()) - base
    hw = coarse_hwhm(f, t)
    if amp <= 0:
        return PeakWidthResult(None, {}, np.zeros_like(t))

    def residual(p):
        return p[0] + p[1] * _ty_unit(f, p[2]) + p[3] * _lorentz_unit(f, p[4]) - t

    lo = np.array([-np.inf, 0.0, 1e-9 * hw, 0.0, 1e-9 * hw])
    hi = np.full(5, np.inf)
    best = None
    # a peak broadened by a gradient can be as wide as the coarse half width
    for frac in (0.02, 0.05, 0.1, 0.2, 0.5, 1.0):
        x0 = np.array([base, 0.8 * amp, hw, 0.2 * amp, frac * hw])
        out = levenberg_marquardt(residual, x0, lo, hi)
        narrow_is_narrow = out.x[4] < out.x[2]
        if narrow_is_narrow and (best is None or out.cost < best.cost):
            best = out
    if best is None:
        # fall back to a single broad pedestal
        out = levenberg_marquardt(lambda p: p[0] + p[1] * _ty_unit(f, p[2]) - t,
                                  np.array([base, amp, hw]), lo[:3], hi[:3])
        p = np.concatenate([out.x, [0.0, 1.0]])
        noise = math.sqrt(2.0 * out.cost / f.size)
    else:
        p = best.x
        noise = math.sqrt(2.0 * best.cost / f.size)
    pedestal = {"baseline": float(p[0]), "amplitude": float(p[1]), "width_hz": float(p[2])}
    excess = t - (p[0] + p[1] * _ty_unit(f, p[2]))
    top = excess[int(np.argmin(np.abs(f)))]
    if top <= max(noise, 1e-6 * amp):
        return PeakWidthResult(None, pedestal, excess)
    width = half_max_width(f, excess)
    inside = int(np.sum(np.abs(f) < 0.5 * width)) if width else 0
    return PeakWidthResult(width, pedestal, excess, inside)


def central_peak_width(spectrum: Spectrum) -> float | None:
    """FWHM (Hz) of the narrow central peak above a broad TY pedestal.

    The spectrum is fitted jointly by a TY pedestal plus a narrow Lorentzian
    (several starts for the narrow width); the pedestal is subtracted and the
    full width at half maximum of the remaining central excess is measured by
    interpolated crossings.  Returns ``None`` when no central excess stands
    above the fit noise.
    """
    res = central_peak_analysis(spectrum)
    if res.width_hz is not None and res.points_inside < 7:
        warnings.warn(f"only {res.points_inside} grid points inside the central peak", PeakResolutionWarning, stacklevel=2)
    return res.width_hz
