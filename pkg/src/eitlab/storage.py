"""Stored light: write, dark evolution with diffusion, and retrieval.

The stored spin coherence lives on a square transverse grid covering the
cell, with an absorbing circular wall.  Dark evolution solves

    d sigma/dt = D lap(sigma) - (gamma_bc + i k_G x) sigma,   k_G = 2 pi g G_x

by Strang splitting: exact pointwise decay/phase half-steps around an exact
spectral diffusion step (type-I sine transform, zero field on the square
edge), followed by zeroing the field outside the cell radius.  The spectral
step is unconditionally stable; sub-steps exist only to keep the splitting
and wall-mask errors small.

During a read the in-beam coherence is drained at the local rate
``u(r) / tau_read`` where ``u`` is the normalized beam intensity and
``tau_read`` the group delay at the read power.  The drained amount per
sub-step is the retrieved signal.

Pulse area is the time integral of the retrieved amplitude.  All areas are in
units of the input pulse area, so a lossless store-and-read returns the
stored fraction.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import dstn
from scipy.special import erf

from .fitting import levenberg_marquardt
from .physics import TWO_PI, ExperimentConfig

# group delay 450 us at 50 uW write power
DELAY_CALIBRATION = (50e-6, 450e-6)  # (W, s)
DARK_SUBSTEP = 50e-6
READ_SUBSTEP_FRACTION = 1.0 / 8.0
AGE_NODES = 64


class StorageFitError(ValueError):
    pass


def group_delay(control_power: float, calibration=DELAY_CALIBRATION) -> float:
    """Group delay (s) for a control power (W); delay scales as 1/power."""
    if not control_power > 0:
        raise ValueError("control_power must be > 0")
    p_cal, t_cal = calibration
    return t_cal * p_cal / control_power


def stored_fraction(delay: float, pulse_width: float) -> float:
    """Part of a Gaussian pulse (amplitude integral) inside the medium at switch-off.

    ``pulse_width`` is the full width at 1/e of the amplitude.  The pulse
    peak sits at the medium centre, so the stored part is the central
    ``delay`` window: ``erf(delay / pulse_width)``.
    """
    if delay < 0 or pulse_width <= 0:
        raise ValueError("need delay >= 0 and pulse_width > 0")
    return float(erf(delay / pulse_width))


@dataclass(frozen=True)
class StorageProtocol:
    """Control-field schedule for a store/evolve/read run (SI units).

    ``schedule`` lists ``(state, duration)`` pairs after the write, with
    state ``"off"`` (dark) or ``"on"`` (read at ``read_power``).  The helpers
    :meth:`simple` and :meth:`double` build the standard schedules.
    """

    pulse_width: float = 1e-3
    write_power: float = 50e-6
    read_power: float = 600e-6
    storage_time: float = 0.0
    read_duration: float = 200e-6
    schedule: tuple = ()
    intermediate_dark: float = 200e-6
    intermediate_read: float = 200e-6
    written_profile: str = "diffused"  # or "beam"

    def __post_init__(self):
        if not self.pulse_width > 0:
            raise ValueError("pulse_width must be > 0")
        if self.write_power < 0 or not self.read_power > 0:
            raise ValueError("need write_power >= 0 and read_power > 0")
        if self.storage_time < 0 or not self.read_duration > 0:
            raise ValueError("need storage_time >= 0 and read_duration > 0")
        if self.written_profile not in ("diffused", "beam"):
            raise ValueError("written_profile must be 'diffused' or 'beam'")
        prev = None
        for state, dur in self.schedule:
            if state not in ("on", "off"):
                raise ValueError(f"schedule state must be 'on' or 'off', got {state!r}")
            if not dur > 0:
                raise ValueError("schedule durations must be > 0")
            if state == prev:
                raise ValueError("schedule must alternate between 'off' and 'on'")
            prev = state

    def simple(self, tau: float) -> "StorageProtocol":
        sched = ((("off", tau),) if tau > 0 else ()) + (("on", self.read_duration),)
        return replace(self, storage_time=tau, schedule=sched)

    def double(self, T: float, intermediate: bool) -> "StorageProtocol":
        """Dark, optional intermediate read, dark T, final read."""
        if intermediate:
            sched = (("off", self.intermediate_dark), ("on", self.intermediate_read))
            if T > 0:
                sched += (("off", T),)
        else:
            sched = (("off", self.intermediate_dark + self.intermediate_read + T),)
        return replace(self, storage_time=T, schedule=sched + (("on", self.read_duration),))

    def to_dict(self):
        d = dict(self.__dict__)
        d["schedule"] = [list(s) for s in self.schedule]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "StorageProtocol":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown protocol keys: {sorted(unknown)}")
        kw = dict(data)
        if "schedule" in kw:
            kw["schedule"] = tuple((str(s), float(d)) for s, d in kw["schedule"])
        return cls(**kw)


class TransverseGrid:
    """Square grid of ``n x n`` interior nodes on [-R, R]^2 plus spectral data."""

    def __init__(self, radius: float, n: int = 128, waist: float = 0.04):
        self.radius = radius
        self.n = n
        self.h = 2 * radius / (n + 1)
        self.x = -radius + self.h * np.arange(1, n + 1)
        X, Y = np.meshgrid(self.x, self.x, indexing="ij")
        self.X = X
        self.r2 = X * X + Y * Y
        self.inside = self.r2 < radius * radius
        k = math.pi * np.arange(1, n + 1) / (2 * radius)
        self.k2 = k[:, None] ** 2 + k[None, :] ** 2
        self.mode = np.exp(-2 * self.r2 / waist**2)
        self._cache = {}

    def diffusion_factor(self, D, dt):
        key = (D, dt)
        if key not in self._cache:
            self._cache[key] = np.exp(-D * self.k2 * dt)
        return self._cache[key]

    def diffuse(self, s, D, dt):
        if D == 0 or dt == 0:
            return s
        fac = self.diffusion_factor(D, dt)
        if np.iscomplexobj(s):
            re = dstn(dstn(s.real, type=1, norm="ortho") * fac, type=1, norm="ortho")
            im = dstn(dstn(s.imag, type=1, norm="ortho") * fac, type=1, norm="ortho")
            return re + 1j * im
        return dstn(dstn(s, type=1, norm="ortho") * fac, type=1, norm="ortho")


@dataclass
class Medium:
    diffusion: float
    gamma_bc: float
    dephasing_gradient: float  # rad/s per cm
    gyromagnetic_ratio: float = 1.4e6  # Hz/G


@dataclass
class StoredCoherenceField:
    """Stored coherence on the transverse grid with loss bookkeeping.

    ``amplitude`` sums to the stored part of the input pulse area.  With no
    gradient the ledger entries plus ``residual`` add up to 1.
    """

    amplitude: np.ndarray
    grid: TransverseGrid = field(repr=False)
    medium: Medium
    ledger: dict = field(default_factory=dict)
    time: float = 0.0

    @property
    def residual(self) -> float:
        return float(np.sum(self.amplitude).real)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2))

    def in_beam_overlap(self) -> float:
        return float(np.abs(np.sum(self.grid.mode * self.amplitude)))

    def copy(self) -> "StoredCoherenceField":
        return StoredCoherenceField(self.amplitude.copy(), self.grid, replace(self.medium), dict(self.ledger), self.time)

    def balance(self) -> float:
        """Input area minus everything accounted for (0 when the ledger closes)."""
        keys = ("transmitted", "retrieved", "decay_loss", "wall_loss")
        return 1.0 - sum(self.ledger.get(k, 0.0) for k in keys) - self.residual


@dataclass
class RetrievalRecord:
    times: np.ndarray
    amplitudes: np.ndarray
    area: float

    def to_rows(self):
        return np.column_stack([self.times, self.amplitudes])


def _medium(config: ExperimentConfig, D=None, gamma_bc=None, gradient=None) -> Medium:
    g = config.magnetics.gradient if gradient is None else gradient
    return Medium(
        config.gas.diffusion_coefficient if D is None else D,
        config.optics.gamma_bc if gamma_bc is None else gamma_bc,
        TWO_PI * config.gas.gyromagnetic_ratio * g,
        config.gas.gyromagnetic_ratio,
    )


_GRIDS: dict = {}


def _grid(radius, n, waist):
    key = (radius, n, waist)
    if key not in _GRIDS:
        _GRIDS[key] = TransverseGrid(radius, n, waist)
    return _GRIDS[key]


def store_pulse(protocol: StorageProtocol, config: ExperimentConfig, n_grid: int = 128):
    """Write the probe pulse into the medium.

    The stored part follows :func:`stored_fraction`.  Its transverse profile
    is the beam intensity mode; with ``written_profile="diffused"`` each write
    age is diffused for its age before switch-off, weighted by the pulse
    envelope over the leading edge, which reduces to the beam mode when D = 0.

    Returns
    -------
    (StoredCoherenceField, transmitted_fraction)
    """
    grid = _grid(config.cell.radius, n_grid, config.beam.waist_radius)
    medium = _medium(config)
    if protocol.write_power == 0:
        amp = np.zeros((n_grid, n_grid))
        f = 0.0
    else:
        delay = group_delay(protocol.write_power)
        f = stored_fraction(delay, protocol.pulse_width)
        prof = grid.mode.copy()
        D = medium.diffusion
        if protocol.written_profile == "diffused" and D > 0:
            sa = protocol.pulse_width / (2 * math.sqrt(2))
            amax = delay / 2 + 5 * sa
            nodes, wq = np.polynomial.legendre.leggauss(AGE_NODES)
            ages = (nodes + 1) / 2 * amax
            wq = wq * amax / 2
            gw = np.exp(-((delay / 2 - ages) ** 2) / (2 * sa * sa)) * wq
            spec = dstn(grid.mode, type=1, norm="ortho")
            acc = np.zeros_like(spec)
            for g, a in zip(gw, ages):
                acc += g * np.exp(-D * grid.k2 * a)
            prof = dstn(spec * acc / gw.sum(), type=1, norm="ortho") * grid.inside
        amp = prof * (f / prof.sum())
    field_ = StoredCoherenceField(amp, grid, medium, {"stored": f, "transmitted": 1.0 - f})
    return field_, 1.0 - f


def _substep(field_: StoredCoherenceField, dt: float, drain: float, record: list | None):
    g = field_.grid
    m = field_.medium
    rate = m.gamma_bc + drain * g.mode
    half = np.exp(-rate * dt / 2)
    phase = np.exp(-0.5j * m.dephasing_gradient * g.X * dt) if m.dephasing_gradient else None
    with np.errstate(invalid="ignore", divide="ignore"):
        pos = rate > 0
        frac_drain = np.where(pos, drain * g.mode / np.where(pos, rate, 1.0), 0.0) * (1 - half)
        frac_decay = np.where(pos, m.gamma_bc / np.where(pos, rate, 1.0), 0.0) * (1 - half)
    s = field_.amplitude
    out = 0j
    decay = 0j
    for leg in (0, 1):
        if leg == 1:
            before = np.sum(s)
            s = g.diffuse(s, m.diffusion, dt)
            if m.diffusion > 0:
                s = s * g.inside
            field_.ledger["wall_loss"] = field_.ledger.get("wall_loss", 0.0) + float((before - np.sum(s)).real)
        # exact integral of the drain and decay fluxes over the half step
        out += np.sum(frac_drain * s)
        decay += np.sum(frac_decay * s)
        s = s * half
        if phase is not None:
            s = s * phase
    field_.amplitude = s
    field_.time += dt
    field_.ledger["decay_loss"] = field_.ledger.get("decay_loss", 0.0) + float(decay.real)
    if record is not None:
        record.append(out)
    return out


def evolve_dark(field_: StoredCoherenceField, duration: float, D=None, gamma_bc=None, gradient=None,
                substep: float = DARK_SUBSTEP) -> StoredCoherenceField:
    """Advance the stored coherence with the control field off.

    ``D`` (cm^2/s), ``gamma_bc`` (1/s) and ``gradient`` (G/cm) override the
    medium stored with the field.  Returns a new field.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    out = field_.copy()
    if D is not None:
        out.medium.diffusion = D
    if gamma_bc is not None:
        out.medium.gamma_bc = gamma_bc
    if gradient is not None:
        out.medium.dephasing_gradient = TWO_PI * out.medium.gyromagnetic_ratio * gradient
    if duration == 0:
        return out
    limit = substep
    if out.medium.gamma_bc > 0:
        limit = min(limit, 0.1 / out.medium.gamma_bc)
    n = max(1, int(math.ceil(duration / limit - 1e-9)))
    for _ in range(n):
        _substep(out, duration / n, 0.0, None)
    return out


def retrieve(field_: StoredCoherenceField, read_power: float, duration: float):
    """Read out with the control field on for ``duration``.

    Returns
    -------
    (RetrievalRecord, StoredCoherenceField)
        The waveform (amplitude per unit time at sub-step midpoints) and the
        field left behind, mostly emptied inside the beam.
    """
    if not read_power > 0:
        raise ValueError("read_power must be > 0")
    if duration < 0:
        raise ValueError("duration must be >= 0")
    out = field_.copy()
    tau = group_delay(read_power)
    n = max(1, int(math.ceil(duration / (tau * READ_SUBSTEP_FRACTION) - 1e-9)))
    dt = duration / n
    flux = []
    t0 = out.time
    for _ in range(n):
        _substep(out, dt, 1.0 / tau, flux)
    flux = np.abs(np.asarray(flux, dtype=complex))
    area = float(np.sum(flux))
    out.ledger["retrieved"] = out.ledger.get("retrieved", 0.0) + float(np.sum(np.asarray(flux)))
    times = t0 + dt * (np.arange(n) + 0.5)
    return RetrievalRecord(times, flux / dt, area), out


def run_protocol(protocol: StorageProtocol, config: ExperimentConfig, n_grid: int = 128):
    """Store, then follow the schedule.  Returns the read records and the final field."""
    field_, _ = store_pulse(protocol, config, n_grid)
    records = []
    for state, dur in protocol.schedule:
        if state == "off":
            field_ = evolve_dark(field_, dur)
        else:
            rec, field_ = retrieve(field_, protocol.read_power, dur)
            records.append(rec)
    return records, field_


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


@dataclass
class DecayCurve:
    taus: np.ndarray
    areas: np.ndarray
    decay_time: float
    decay_time_stderr: float
    amplitude: float
    no_decay: bool
    records: list = field(default_factory=list, repr=False)

    @property
    def linewidth_hz(self) -> float:
        """Equivalent decoherence linewidth 1/(pi T) in Hz."""
        return 0.0 if self.no_decay else 1.0 / (math.pi * self.decay_time)


def fit_exponential(taus, areas):
    """Least-squares fit of ``A exp(-tau/T)``; returns (A, T, stderr_T, no_decay)."""
    taus = np.asarray(taus, dtype=float)
    areas = np.asarray(areas, dtype=float)
    if np.any(areas <= 0):
        raise StorageFitError("retrieved areas must be positive to fit a decay")
    if np.ptp(areas) <= 1e-9 * np.max(areas):
        return float(np.mean(areas)), math.inf, 0.0, True
    slope = np.polyfit(taus, np.log(areas), 1)[0]
    T0 = -1.0 / slope if slope < 0 else 10 * np.ptp(taus)
    A0 = float(areas[0] * math.exp(taus[0] / T0))
    res = levenberg_marquardt(lambda p: p[0] * np.exp(-taus / p[1]) - areas, [A0, T0], [0.0, 1e-12], [math.inf, math.inf])
    A, T = res.x
    dof = max(taus.size - 2, 1)
    cov = np.linalg.pinv(res.jac.T @ res.jac) * (2 * res.cost / dof)
    return float(A), float(T), float(math.sqrt(max(cov[1, 1], 0.0))), False


def decay_curve(protocol: StorageProtocol, config: ExperimentConfig, taus, n_grid: int = 128, workers: int = 1) -> DecayCurve:
    """Retrieved area versus storage time, with a fitted 1/e time."""
    taus = np.asarray(taus, dtype=float)

    def one(tau):
        recs, _ = run_protocol(protocol.simple(float(tau)), config, n_grid)
        return recs[-1]

    recs = _map(one, taus, workers)
    areas = np.array([r.area for r in recs])
    A, T, dT, flat = fit_exponential(taus, areas)
    return DecayCurve(taus, areas, T, dT, A, flat, recs)


@dataclass
class DoubleReadoutPoint:
    T: float
    area_with: float
    area_without: float
    first_read: float

    @property
    def ratio(self) -> float:
        return self.area_with / self.area_without if self.area_without > 0 else math.nan


def double_readout(protocol: StorageProtocol, config: ExperimentConfig, T_list, n_grid: int = 128, workers: int = 1):
    """Final-read areas with and without an intermediate read, for each dark time T.

    The field after the first dark interval is shared by both branches, so
    each T costs two dark evolutions and two reads.
    """
    base, _ = store_pulse(protocol, config, n_grid)
    base = evolve_dark(base, protocol.intermediate_dark)
    first, drained = retrieve(base, protocol.read_power, protocol.intermediate_read)

    def one(T):
        T = float(T)
        a = evolve_dark(drained, T)
        rec_a, _ = retrieve(a, protocol.read_power, protocol.read_duration)
        b = evolve_dark(base, protocol.intermediate_read + T)
        rec_b, _ = retrieve(b, protocol.read_power, protocol.read_duration)
        return DoubleReadoutPoint(T, rec_a.area, rec_b.area, first.area)

    return _map(one, list(T_list), workers)
