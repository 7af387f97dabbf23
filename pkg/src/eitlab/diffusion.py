"""Monte-Carlo model of ground-state coherence diffusing in and out of the beam.

Each atom carries a single complex coherence ``sigma`` obeying

    d sigma/dt = -(R(r) + gamma_bc + i Delta(x, delta)) sigma + R(r)

with pumping ``R(r) = R0 I(r)/I0`` inside the Gaussian beam and
``Delta = delta + 2 pi g G_x x`` from the detuning and the field gradient.
Outside the beam the coherence precesses freely, so an atom that leaves and
comes back acts like a Ramsey interrogation with a long dark period.

The detuning enters only as a uniform phase ``exp(-i delta tau)``.  In the
stationary ensemble the intensity-weighted mean coherence is therefore a
Fourier transform of a path correlation

    C(tau) = E[ I(r_tau) exp(-int_0^tau (R + gamma_bc + i k x) dt) ]

with the start point drawn from the pumping profile.  One set of trajectories
gives the spectrum at every detuning and, carrying one weight per gradient,
at every gradient.

Trajectories are grouped in fixed-size chunks; trajectory ``j`` always uses
the seed ``SeedSequence(seed).generate_state(N)[j]``, and chunk results are
summed in index order, so results do not depend on the worker count.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.signal import czt

from .physics import TWO_PI, ExperimentConfig, Spectrum, rad_to_hz

CHUNK_SIZE = 256
MAX_BATCHES = 16
MAX_DURATION_CAP = 50e-3  # s
# Atoms farther than this many waists from the axis see I/I0 < 2e-11.
FAR_ZONE = 3.5
# Adaptive steps keep the beam zone and the wall six standard deviations away.
SAFETY_SIGMAS = 6.0


class UndersampledGridWarning(UserWarning):
    pass


class DistortionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrajectoryParams:
    """Time step, truncation, wall policy and seed of a trajectory ensemble.

    ``boundary`` is ``"wall"`` (coherence destroyed on contact with the cell
    wall, atom reflected) or ``"bulk"`` (reflecting wall, bulk relaxation only).
    """

    time_step: float
    max_duration: float
    boundary: str = "wall"
    seed: int = 20060215

    def __post_init__(self):
        if not self.time_step > 0:
            raise ValueError("time_step must be > 0")
        if not self.max_duration >= self.time_step:
            raise ValueError("max_duration must be >= time_step")
        if self.boundary not in ("wall", "bulk"):
            raise ValueError("boundary must be 'wall' or 'bulk'")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @classmethod
    def for_config(cls, config: ExperimentConfig, seed: int = 20060215, **overrides) -> "TrajectoryParams":
        """Defaults: dt = w^2/(25 D), duration = min(20/gamma_bc, 50 ms)."""
        D = config.gas.diffusion_coefficient
        w = config.beam.waist_radius
        gbc = config.optics.gamma_bc
        dt = w * w / (25.0 * D) if D > 0 else 1e-6
        dur = min(20.0 / gbc, MAX_DURATION_CAP) if gbc > 0 else MAX_DURATION_CAP
        kw = dict(time_step=dt, max_duration=max(dur, dt), seed=seed)
        kw.update(overrides)
        params = cls(**kw)
        if D > 0 and params.time_step > w * w / (25.0 * D) * (1 + 1e-12):
            raise ValueError("time_step must not exceed w^2/(25 D)")
        return params

    @property
    def n_steps(self) -> int:
        return int(round(self.max_duration / self.time_step))


@dataclass(frozen=True)
class CoherenceOde:
    """Coefficients of the single-coherence rate model (rad/s, cm)."""

    pump_rate: float
    gamma_bc: float
    waist_radius: float
    dephasing_gradient: float = 0.0  # rad/s per cm of x

    @classmethod
    def from_config(cls, config: ExperimentConfig, gradient: float | None = None) -> "CoherenceOde":
        g = config.magnetics.gradient if gradient is None else gradient
        return cls(
            pump_rate=config.optics.pump_rate,
            gamma_bc=config.optics.gamma_bc,
            waist_radius=config.beam.waist_radius,
            dephasing_gradient=TWO_PI * config.gas.gyromagnetic_ratio * g,
        )

    def pump(self, r):
        r = np.asarray(r, dtype=float)
        return self.pump_rate * np.exp(-2.0 * r * r / self.waist_radius**2)

    def dephasing(self, x, delta):
        return delta + self.dephasing_gradient * np.asarray(x, dtype=float)


def step_brownian(positions, D, dt, rng, radius=None, boundary="wall"):
    """Advance 2-D positions by one Brownian step.

    Each axis gets an independent N(0, 2 D dt) increment.  With a ``radius``
    the atom is reflected back into the disk; ``hit`` marks atoms that touched
    the wall during the step (landing outside, or a Brownian-bridge excursion
    between two inside points).  Under the ``"bulk"`` policy ``hit`` is all
    False.

    Returns
    -------
    new_positions : ndarray, shape (N, 2)
    hit : ndarray of bool, shape (N,)
    """
    pos = np.asarray(positions, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be > 0")
    sd = math.sqrt(2.0 * D * dt)
    new = pos + sd * rng.standard_normal(pos.shape) if D > 0 else pos.copy()
    hit = np.zeros(pos.shape[0], dtype=bool)
    if radius is None:
        return new, hit
    r1 = np.hypot(new[:, 0], new[:, 1])
    outside = r1 > radius
    if boundary == "wall" and D > 0:
        r0 = np.hypot(pos[:, 0], pos[:, 1])
        d0 = np.maximum(radius - r0, 0.0)
        d1 = np.maximum(radius - r1, 0.0)
        p_cross = np.exp(-d0 * d1 / (D * dt))
        hit = outside | (rng.random(pos.shape[0]) < p_cross)
    if np.any(outside):
        scale = np.maximum(2.0 * radius - r1[outside], 0.0) / r1[outside]
        new[outside] *= scale[:, None]
    return new, hit


def first_exit_times(radius, D, dt, n, rng, max_steps=1_000_000):
    """Monte-Carlo first exit times from a disk for walkers started at its center."""
    pos = np.zeros((n, 2))
    t_exit = np.full(n, np.nan)
    active = np.arange(n)
    for k in range(1, max_steps + 1):
        pos_a, hit = step_brownian(pos[active], D, dt, rng, radius=radius, boundary="wall")
        pos[active] = pos_a
        t_exit[active[hit]] = k * dt
        active = active[~hit]
        if active.size == 0:
            break
    return t_exit


def mean_squared_displacement(D, dt, n_steps, n, rng):
    """Ensemble MSD after each step for free 2-D diffusion."""
    pos = np.zeros((n, 2))
    msd = np.empty(n_steps)
    for k in range(n_steps):
        pos, _ = step_brownian(pos, D, dt, rng)
        msd[k] = np.mean(np.sum(pos * pos, axis=1))
    return msd


def evolve_coherence(trajectory, delta, ode: CoherenceOde, dt, sigma0=0.0):
    """Integrate the coherence along a sampled trajectory.

    The coefficients are held constant over each step at the mean of their
    endpoint values and the linear ODE is stepped exactly:
    ``sigma <- s + (sigma - s) exp(-a dt)`` with ``a = R + gamma_bc + i Delta``
    and fixed point ``s = R / a``.

    Parameters
    ----------
    trajectory : array_like, shape (n+1, 2)
        Positions (cm) at times ``0, dt, ..., n dt``.
    delta : float or array_like
        Two-photon detuning(s), rad/s.

    Returns
    -------
    ndarray, shape (n+1, *shape(delta)), complex
    """
    traj = np.asarray(trajectory, dtype=float)
    d = np.asarray(delta, dtype=float)
    r = np.hypot(traj[:, 0], traj[:, 1])
    R = ode.pump(r)
    x = traj[:, 0]
    out = np.empty((traj.shape[0],) + d.shape, dtype=complex)
    sigma = np.full(d.shape, sigma0, dtype=complex)
    out[0] = sigma
    for k in range(traj.shape[0] - 1):
        Rm = 0.5 * (R[k] + R[k + 1])
        xm = 0.5 * (x[k] + x[k + 1])
        a = Rm + ode.gamma_bc + 1j * ode.dephasing(xm, d)
        e = np.exp(-a * dt)
        fixed = np.where(a != 0, Rm / np.where(a != 0, a, 1.0), 0.0)
        sigma = fixed + (sigma - fixed) * e
        out[k + 1] = sigma
    return out


@numba.njit(cache=True, nogil=True)
def _correlation_kernel(seeds, D, w, radius, pump, gamma_bc, ks, dt, n_steps, wall):
    n_g = ks.shape[0]
    corr = np.zeros((n_g, n_steps), dtype=np.complex128)
    weight = np.empty(n_g, dtype=np.complex128)
    inv_w2 = 2.0 / (w * w)
    beam_zone = FAR_ZONE * w
    r2_max = radius * radius
    sqrt2d = math.sqrt(2.0 * D)
    for t in range(seeds.shape[0]):
        np.random.seed(seeds[t])
        while True:
            x = np.random.normal(0.0, 0.5 * w)
            y = np.random.normal(0.0, 0.5 * w)
            if x * x + y * y < r2_max:
                break
        for g in range(n_g):
            weight[g] = 1.0
        log_mag = 0.0
        inten = math.exp(-inv_w2 * (x * x + y * y))
        i = 0
        while i < n_steps:
            if inten > 1e-14:
                for g in range(n_g):
                    corr[g, i] += inten * weight[g]
            r = math.sqrt(x * x + y * y)
            m = 1
            if D > 0:
                d_free = min(r - beam_zone, radius - r)
                if d_free > 0:
                    h = (d_free / (SAFETY_SIGMAS * sqrt2d)) ** 2
                    m = max(1, int(h / dt))
            if i + m > n_steps:
                m = n_steps - i
            h = m * dt
            sd = math.sqrt(2.0 * D * h)
            x1 = x + sd * np.random.normal()
            y1 = y + sd * np.random.normal()
            x_int = 0.5 * (x + x1) * h
            if m > 1:
                # time integral of x over a Brownian bridge between the endpoints
                x_int += math.sqrt(D * h * h * h / 6.0) * np.random.normal()
            r1sq = x1 * x1 + y1 * y1
            killed = False
            if r1sq > r2_max:
                r1 = math.sqrt(r1sq)
                s = max(2.0 * radius - r1, 0.0) / r1
                x1 *= s
                y1 *= s
                killed = wall
            elif wall and D > 0:
                d0 = radius - r
                d1 = radius - math.sqrt(r1sq)
                if np.random.random() < math.exp(-d0 * d1 / (D * h)):
                    killed = True
            inten1 = math.exp(-inv_w2 * (x1 * x1 + y1 * y1))
            decay = (pump * 0.5 * (inten + inten1) + gamma_bc) * h
            log_mag += decay
            mag = math.exp(-decay)
            for g in range(n_g):
                weight[g] *= mag * complex(math.cos(ks[g] * x_int), -math.sin(ks[g] * x_int))
            x = x1
            y = y1
            inten = inten1
            i += m
            if killed or log_mag > 30.0:
                break
    return corr


@dataclass
class TrajectoryEnsembleResult:
    """Aggregated coherence of a trajectory ensemble.

    ``coherence[g, j]`` is the intensity-weighted mean coherence
    ``<I sigma>/<I>`` at ``gradients[g]`` and ``detunings[j]``; ``stderr`` its
    batch-means standard error.  ``correlation`` keeps C(tau) so further
    detuning grids can be evaluated without re-running trajectories.
    """

    detunings: np.ndarray
    gradients: np.ndarray
    coherence: np.ndarray
    stderr: np.ndarray
    n_traj: int
    time_step: float
    pump_rate: float
    correlation: np.ndarray = field(repr=False)
    batch_correlation: np.ndarray = field(repr=False)
    batch_counts: np.ndarray = field(repr=False)

    def coherence_at(self, detunings, gradient_index: int = 0):
        return _transform(self.correlation[gradient_index], self.time_step, np.asarray(detunings, float)) * self.pump_rate


def _filon_weights(theta):
    """Hat-function integrals of exp(-i theta s) for interior and start nodes."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1e-4
    safe = np.where(small, 1.0, theta)
    interior = np.where(small, 1.0 - theta**2 / 12.0, (np.sin(safe / 2) / (safe / 2)) ** 2)
    it = 1j * safe
    start = np.where(small, 0.5 - 1j * theta / 6.0 - theta**2 / 24.0, (1.0 - (1.0 - np.exp(-it)) / it) / it)
    return interior, start


def _is_uniform(d):
    if d.size < 3:
        return False
    step = np.diff(d)
    return np.allclose(step, step[0], rtol=1e-9, atol=0.0)


def _transform(corr_row, dt, detunings):
    """int_0^T C(tau) exp(-i delta tau) dtau for piecewise-linear C."""
    theta = detunings * dt
    if _is_uniform(detunings) and detunings.size > 64:
        a = np.exp(1j * theta[0])
        w = np.exp(-1j * (theta[1] - theta[0]))
        sums = czt(corr_row, m=detunings.size, w=w, a=a)
    else:
        sums = np.empty(detunings.size, dtype=complex)
        n = corr_row.size
        idx = np.arange(n)
        for lo in range(0, detunings.size, 64):
            th = theta[lo : lo + 64]
            sums[lo : lo + 64] = np.exp(-1j * np.outer(th, idx)) @ corr_row
    interior, start = _filon_weights(theta)
    c0 = corr_row[0]
    return dt * (interior * (sums - c0) + start * c0)


def _chunk_bounds(n_traj):
    return [(lo, min(lo + CHUNK_SIZE, n_traj)) for lo in range(0, n_traj, CHUNK_SIZE)]


def simulate_ensemble(
    config: ExperimentConfig,
    gradients,
    detunings,
    n_traj: int,
    params: TrajectoryParams | None = None,
    workers: int = 1,
) -> TrajectoryEnsembleResult:
    """Run the trajectory ensemble once for all ``gradients`` (G/cm)."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    params = params or TrajectoryParams.for_config(config)
    gradients = np.atleast_1d(np.asarray(gradients, dtype=float))
    detunings = np.asarray(detunings, dtype=float)
    ks = TWO_PI * config.gas.gyromagnetic_ratio * gradients
    seeds = np.random.SeedSequence(int(params.seed)).generate_state(n_traj, dtype=np.uint32)
    args = (
        float(config.gas.diffusion_coefficient),
        float(config.beam.waist_radius),
        float(config.cell.radius),
        float(config.optics.pump_rate),
        float(config.optics.gamma_bc),
        ks,
        float(params.time_step),
        params.n_steps,
        params.boundary == "wall",
    )
    bounds = _chunk_bounds(n_traj)

    def run(b):
        return _correlation_kernel(seeds[b[0] : b[1]], *args)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(run, bounds))
    else:
        chunks = [run(b) for b in bounds]

    n_batches = min(len(chunks), MAX_BATCHES)
    edges = [len(chunks) * b // n_batches for b in range(n_batches + 1)]
    batch_corr = np.zeros((n_batches, ks.size, params.n_steps), dtype=complex)
    counts = np.zeros(n_batches)
    for b in range(n_batches):
        for c in range(edges[b], edges[b + 1]):
            batch_corr[b] += chunks[c]
            counts[b] += bounds[c][1] - bounds[c][0]
    total = np.zeros((ks.size, params.n_steps), dtype=complex)
    for b in range(n_batches):
        total += batch_corr[b]
    total /= n_traj

    pump = config.optics.pump_rate
    coh = np.stack([_transform(total[g], params.time_step, detunings) for g in range(ks.size)]) * pump
    if n_batches > 1:
        dev = np.zeros((ks.size, detunings.size))
        for b in range(n_batches):
            cb = np.stack([_transform(batch_corr[b, g] / counts[b], params.time_step, detunings) for g in range(ks.size)])
            dev += counts[b] * np.abs(cb * pump - coh) ** 2
        stderr = np.sqrt(dev / ((n_batches - 1) * n_traj))
    else:
        stderr = np.full((ks.size, detunings.size), np.nan)
    return TrajectoryEnsembleResult(
        detunings=detunings,
        gradients=gradients,
        coherence=coh,
        stderr=stderr,
        n_traj=n_traj,
        time_step=params.time_step,
        pump_rate=pump,
        correlation=total,
        batch_correlation=batch_corr,
        batch_counts=counts,
    )


def expected_peak_width(config: ExperimentConfig) -> float:
    """Narrowest structure the model can produce (Hz): ground relaxation plus
    the lowest diffusion mode of the cell."""
    D = config.gas.diffusion_coefficient
    wall_rate = 2.405**2 * D / config.cell.radius**2
    return (config.optics.gamma_bc + wall_rate) / math.pi


def _check_grid(config, detunings):
    if detunings.size < 2:
        return
    width = expected_peak_width(config)
    centre = np.argmin(np.abs(detunings))
    lo, hi = max(centre - 1, 0), min(centre + 1, detunings.size - 1)
    spacing = rad_to_hz(np.max(np.diff(detunings[lo : hi + 1])))
    if spacing > width / 5.0:
        warnings.warn(
            f"detuning grid spacing {spacing:.3g} Hz exceeds 1/5 of the expected narrow-peak width {width:.3g} Hz",
            UndersampledGridWarning,
            stacklevel=3,
        )


def gradient_scan(
    config: ExperimentConfig,
    gradients,
    detunings,
    n_traj: int,
    seed: int = 20060215,
    params: TrajectoryParams | None = None,
    workers: int = 1,
    baseline: float = 0.0,
    peak: float = 1.0,
) -> list[Spectrum]:
    """EIT spectra at each gradient (G/cm) from one shared trajectory ensemble.

    Transmission is ``baseline + (peak - baseline) Re<sigma>/Re<sigma>_0`` where
    the reference is the zero-gradient coherence at zero detuning, so the
    gradient-free spectrum peaks at ``peak``.
    """
    from .coils import distortion_check

    detunings = np.asarray(detunings, dtype=float)
    _check_grid(config, detunings)
    params = params or TrajectoryParams.for_config(config, seed=seed)
    grads = [float(g) for g in np.atleast_1d(gradients)]
    carried = [0.0] + [g for g in grads if g != 0.0]
    res = simulate_ensemble(config, carried, detunings, n_traj, params=params, workers=workers)
    ref = float(res.coherence_at(np.array([0.0]), 0)[0].real)
    scale = (peak - baseline) / ref
    out = []
    for g in grads:
        row = carried.index(g)
        meta = {
            "gradient_G_per_cm": g,
            "n_traj": n_traj,
            "seed": int(params.seed),
            "time_step": params.time_step,
            "max_duration": params.max_duration,
            "boundary": params.boundary,
            "stderr": res.stderr[row] * abs(scale),
            "coherence": res.coherence[row],
        }
        if g != 0.0 and config.magnetics.bias > 0:
            check = distortion_check(g, config.cell.length, config.magnetics.bias)
            meta["distortion"] = check
            if not check.ok:
                warnings.warn(
                    f"gradient {g} G/cm at B0 = {config.magnetics.bias} G: distortion ratio {check.ratio:.3f} ({check.status})",
                    DistortionWarning,
                    stacklevel=2,
                )
        trans = baseline + scale * res.coherence[row].real
        out.append(Spectrum(detunings, trans, source="monte-carlo", metadata=meta))
    return out


def synth_spectrum(
    config: ExperimentConfig,
    detunings,
    n_traj: int,
    seed: int = 20060215,
    params: TrajectoryParams | None = None,
    workers: int = 1,
    baseline: float = 0.0,
    peak: float = 1.0,
) -> Spectrum:
    """Monte-Carlo EIT spectrum at the configuration's own gradient."""
    if n_traj < 1000:
        warnings.warn("fewer than 1000 trajectories; error bars are not meaningful", stacklevel=2)
    return gradient_scan(
        config,
        [config.magnetics.gradient],
        detunings,
        n_traj,
        seed=seed,
        params=params,
        workers=workers,
        baseline=baseline,
        peak=peak,
    )[0]
