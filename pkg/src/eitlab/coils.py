"""Biot-Savart field of a transverse-gradient (Golay saddle) coil set.

Lengths are in cm, currents in A and fields in G.  With cm lengths the
Biot-Savart prefactor mu0/(4 pi) becomes 0.1 G cm/A:

    B = 0.1 I sum dl x r / |r|^3

Arcs are discretized into elements placed at the arc midpoint with the exact
tangent ``a dphi phi_hat``; this makes the on-axis field of a circular loop
exact for any element count.  Straight segments use midpoint elements of at
most the arc element length.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

BIOT_SAVART_CGS = 0.1  # G cm / A
DISTORTION_PASS = 0.1
DISTORTION_WARN = 0.2


class NearWireWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CoilGeometry:
    """Saddle set: inner arcs at +-z0, outer arcs at +-z1 on a cylinder of radius ``a``."""

    z0: float = 2.4
    z1: float = 16.2
    radius: float = 6.4
    arc_angle: float = 120.0  # degrees
    turns: int = 1
    current: float = 1.0
    element_deg: float = 1.0

    def __post_init__(self):
        if not 0 < self.z0 < self.z1:
            raise ValueError(f"need 0 < z0 < z1, got z0={self.z0}, z1={self.z1}")
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if not 0 < self.arc_angle < 180:
            raise ValueError("arc_angle must be in (0, 180) degrees")
        if int(self.turns) != self.turns or self.turns < 1:
            raise ValueError("turns must be a positive integer")
        if not 0 < self.element_deg <= 1.0:
            raise ValueError("element_deg must be in (0, 1]")

    def scaled(self, factor: float) -> "CoilGeometry":
        return CoilGeometry(self.z0 * factor, self.z1 * factor, self.radius * factor,
                            self.arc_angle, self.turns, self.current, self.element_deg)


@dataclass
class WireSet:
    """Discretized current elements plus the vertex chains they came from.

    ``dl`` points along the current for one ampere-turn; ``ampere_turns`` is
    the total drive (turns times current).
    """

    midpoints: np.ndarray
    dl: np.ndarray
    chains: list = field(default_factory=list)
    ampere_turns: float = 1.0

    @property
    def element_length(self) -> float:
        return float(np.max(np.linalg.norm(self.dl, axis=1)))

    def mirrored_x(self) -> "WireSet":
        flip = np.array([-1.0, 1.0, 1.0])
        # mirroring a polar vector field: positions and dl flip x
        return WireSet(self.midpoints * flip, self.dl * flip,
                       [c * flip for c in self.chains], self.ampere_turns)

    def __add__(self, other: "WireSet") -> "WireSet":
        if self.ampere_turns != other.ampere_turns:
            raise ValueError("cannot merge wire sets with different drive")
        return WireSet(np.vstack([self.midpoints, other.midpoints]), np.vstack([self.dl, other.dl]),
                       self.chains + other.chains, self.ampere_turns)


def _arc(radius, z, phi_start, phi_end, element_deg):
    n = max(1, int(math.ceil(abs(phi_end - phi_start) / math.radians(element_deg) - 1e-9)))
    edges = np.linspace(phi_start, phi_end, n + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    dphi = edges[1:] - edges[:-1]
    pts = np.column_stack([radius * np.cos(mid), radius * np.sin(mid), np.full(n, z)])
    dl = np.column_stack([-np.sin(mid), np.cos(mid), np.zeros(n)]) * (radius * dphi)[:, None]
    verts = np.column_stack([radius * np.cos(edges), radius * np.sin(edges), np.full(n + 1, z)])
    return pts, dl, verts


def _line(p0, p1, max_len):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(1, int(math.ceil(np.linalg.norm(p1 - p0) / max_len - 1e-9)))
    t = (np.arange(n) + 0.5) / n
    pts = p0 + t[:, None] * (p1 - p0)
    dl = np.tile((p1 - p0) / n, (n, 1))
    verts = p0 + np.linspace(0, 1, n + 1)[:, None] * (p1 - p0)
    return pts, dl, verts


def circular_loop(radius: float, z: float = 0.0, element_deg: float = 1.0) -> WireSet:
    """Single counter-clockwise loop in the plane at height ``z``."""
    pts, dl, verts = _arc(radius, z, 0.0, 2 * math.pi, element_deg)
    return WireSet(pts, dl, [verts])


def loop_axis_field(radius: float, z: float, current: float = 1.0) -> float:
    """Closed-form on-axis B_z (G) of a circular loop centred at the origin."""
    return BIOT_SAVART_CGS * 2 * math.pi * current * radius**2 / (radius**2 + z**2) ** 1.5


def _saddle(a, z_inner, z_outer, phi_c, sense, half, element_deg):
    """One closed saddle; ``sense`` = +1 runs the inner arc along +phi."""
    max_len = a * math.radians(element_deg)
    p_lo, p_hi = phi_c - half, phi_c + half
    if sense < 0:
        p_lo, p_hi = p_hi, p_lo
    pieces = [
        _arc(a, z_inner, p_lo, p_hi, element_deg),
        _line([a * math.cos(p_hi), a * math.sin(p_hi), z_inner], [a * math.cos(p_hi), a * math.sin(p_hi), z_outer], max_len),
        _arc(a, z_outer, p_hi, p_lo, element_deg),
        _line([a * math.cos(p_lo), a * math.sin(p_lo), z_outer], [a * math.cos(p_lo), a * math.sin(p_lo), z_inner], max_len),
    ]
    pts = np.vstack([p[0] for p in pieces])
    dl = np.vstack([p[1] for p in pieces])
    chain = np.vstack([pieces[0][2]] + [p[2][1:] for p in pieces[1:]])
    return pts, dl, chain


def build_golay_set(geometry: CoilGeometry = CoilGeometry()) -> WireSet:
    """Four saddles producing dB_z/dx at the centre with B(0) = 0.

    Saddles sit on the +x and -x sides for z > 0 and z < 0.  Inner arcs carry
    current along +phi on the +x side and along -phi on the -x side, so B_z is
    odd in x and even in z; outer arcs close each saddle with the reverse
    sense.
    """
    g = geometry
    half = math.radians(g.arc_angle) / 2
    pts, dls, chains = [], [], []
    for zs in (1.0, -1.0):
        for phi_c, sense in ((0.0, 1), (math.pi, -1)):
            p, d, c = _saddle(g.radius, zs * g.z0, zs * g.z1, phi_c, sense, half, g.element_deg)
            pts.append(p)
            dls.append(d)
            chains.append(c)
    return WireSet(np.vstack(pts), np.vstack(dls), chains, ampere_turns=g.turns * g.current)


def biot_savart(wires: WireSet, points, current: float | None = None, warn: bool = True) -> np.ndarray:
    """Field (G) at ``points`` (..., 3) in cm.

    ``current`` is the total ampere-turns; by default the wire set's own drive.
    Points closer than ten element lengths to a wire element trigger a
    :class:`NearWireWarning`.
    """
    I = wires.ampere_turns if current is None else current
    pts = np.asarray(points, dtype=float)
    shape = pts.shape
    flat = pts.reshape(-1, 3)
    out = np.empty_like(flat)
    near = False
    limit2 = (10.0 * wires.element_length) ** 2
    for lo in range(0, flat.shape[0], 256):
        p = flat[lo : lo + 256]
        r = p[:, None, :] - wires.midpoints[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", r, r)
        near = near or bool(np.any(r2 < limit2))
        inv3 = r2 ** -1.5
        cross = np.cross(wires.dl[None, :, :], r)
        out[lo : lo + 256] = np.einsum("ijk,ij->ik", cross, inv3)
    if warn and near:
        warnings.warn("field evaluated within 10 element lengths of a wire; discretization error may be large",
                      NearWireWarning, stacklevel=2)
    return (BIOT_SAVART_CGS * I * out).reshape(shape)


def gradient_at_center(wires: WireSet, step: float = 0.05) -> float:
    """dB_z/dx at the origin per ampere-turn, G/(cm A), by central difference."""
    pts = np.array([[step, 0.0, 0.0], [-step, 0.0, 0.0]])
    b = biot_savart(wires, pts, current=1.0)
    return float((b[0, 2] - b[1, 2]) / (2 * step))


def turns_for_gradient(per_ampere_turn: float, target: float = 0.04) -> int:
    """Smallest integer turns reaching ``target`` G/(cm A)."""
    return int(math.ceil(target / abs(per_ampere_turn) - 1e-12))


@dataclass
class FieldMap:
    """Field vectors on a regular grid.

    ``valid`` is False at nodes within two grid cells of a wire; their field
    is stored as zero and they are skipped by derivative reports and CSV output.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    field: np.ndarray  # (nx, ny, nz, 3)
    valid: np.ndarray  # (nx, ny, nz)

    @property
    def spacing(self):
        return tuple(float(a[1] - a[0]) if a.size > 1 else 0.0 for a in (self.x, self.y, self.z))

    def rows(self):
        X, Y, Z = np.meshgrid(self.x, self.y, self.z, indexing="ij")
        m = self.valid
        return np.column_stack([X[m], Y[m], Z[m], self.field[m]])


def field_map(wires: WireSet, x, y, z, current: float | None = None) -> FieldMap:
    x, y, z = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, y, z))
    X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1)
    cells = [np.min(np.diff(a)) for a in (x, y, z) if a.size > 1]
    cell = max(cells) if cells else 0.0
    valid = np.ones(X.shape, dtype=bool)
    flat = pts.reshape(-1, 3)
    vflat = valid.reshape(-1)
    excl = max(2 * cell, 1e-9)
    for lo in range(0, flat.shape[0], 1024):
        d = np.linalg.norm(flat[lo : lo + 1024, None, :] - wires.midpoints[None], axis=2)
        vflat[lo : lo + 1024] = d.min(axis=1) > excl
    B = np.zeros_like(pts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearWireWarning)
        B[valid] = biot_savart(wires, pts[valid], current=current)
    return FieldMap(x, y, z, B, valid)


@dataclass
class CoilReport:
    gradient: float  # dB_z/dx at the centre, G/cm at the map drive
    curl_residual: float
    divergence_residual: float
    linearity_deviation: float
    linearity_range: float

    def to_dict(self):
        return dict(self.__dict__)


def curl_and_linearity_report(fmap: FieldMap, linear_range: float = 1.0) -> CoilReport:
    """Finite-difference checks of a field map.

    Curl and divergence residuals are the largest magnitudes over interior
    valid nodes, relative to the centre gradient.  Linearity is the largest
    fractional deviation of dB_z/dx along the x axis within ``linear_range``.
    """
    hx, hy, hz = fmap.spacing
    if min(fmap.x.size, fmap.y.size, fmap.z.size) < 3:
        raise ValueError("field map needs at least 3 nodes per axis")
    if max(hx, hy, hz) > 0.1 + 1e-12:
        warnings.warn("map spacing above 0.1 cm; derivative residuals may be resolution limited", stacklevel=2)
    Bx, By, Bz = (fmap.field[..., k] for k in range(3))
    dBx = np.gradient(Bx, hx, hy, hz)
    dBy = np.gradient(By, hx, hy, hz)
    dBz = np.gradient(Bz, hx, hy, hz)
    interior = fmap.valid.copy()
    for ax in range(3):
        sl = [slice(None)] * 3
        sl[ax] = 0
        interior[tuple(sl)] = False
        sl[ax] = -1
        interior[tuple(sl)] = False
    # derivatives next to an excluded node are not trustworthy
    from scipy.ndimage import binary_erosion

    interior &= binary_erosion(fmap.valid, iterations=1, border_value=0)
    ix = int(np.argmin(np.abs(fmap.x)))
    iy = int(np.argmin(np.abs(fmap.y)))
    iz = int(np.argmin(np.abs(fmap.z)))
    g0 = dBz[0][ix, iy, iz]
    if g0 == 0:
        raise ValueError("zero gradient at the map centre")
    curl = np.stack([dBz[1] - dBy[2], dBx[2] - dBz[0], dBy[0] - dBx[1]], axis=-1)
    div = dBx[0] + dBy[1] + dBz[2]
    curl_res = float(np.max(np.linalg.norm(curl[interior], axis=-1)) / abs(g0))
    div_res = float(np.max(np.abs(div[interior])) / abs(g0))
    along = dBz[0][:, iy, iz]
    sel = (np.abs(fmap.x) <= linear_range + 1e-12) & interior[:, iy, iz]
    lin = float(np.max(np.abs(along[sel] - g0)) / abs(g0))
    return CoilReport(float(g0), curl_res, div_res, lin, float(linear_range))


@dataclass(frozen=True)
class DistortionResult:
    ratio: float
    status: str  # "pass", "warn" or "fail"

    @property
    def ok(self) -> bool:
        return self.status == "pass"

    def to_dict(self):
        return {"ratio": self.ratio, "status": self.status, "pass": self.ok}


def distortion_check(gradient: float, length: float, bias: float) -> DistortionResult:
    """Transverse-field distortion ratio (G L / 2) / (sqrt(2) B0).

    The transverse field dB_x/dz = dB_z/dx reaches G L/2 at the cell ends and
    must stay small against the bias.  Pass below 0.1, warn up to 0.2.
    """
    if not bias > 0:
        raise ValueError("bias field must be > 0")
    ratio = abs(gradient) * length / 2.0 / (math.sqrt(2.0) * bias)
    status = "pass" if ratio < DISTORTION_PASS else ("warn" if ratio < DISTORTION_WARN else "fail")
    return DistortionResult(ratio, status)
