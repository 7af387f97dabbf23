"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

The Monte-Carlo ensembles come from the session fixtures in ``conftest.py``;
their build times are included in the runtime checks.
"""
import json
import math
import time
import warnings

import numpy as np
import pytest

from conftest import TIMINGS
from eitlab.cli import run
from eitlab.coils import (CoilGeometry, build_golay_set, biot_savart, circular_loop, curl_and_linearity_report,
                          distortion_check, field_map, gradient_at_center, loop_axis_field, turns_for_gradient)
from eitlab.diffusion import first_exit_times, gradient_scan, mean_squared_displacement
from eitlab.fitting import central_peak_width, compare_models, fit
from eitlab.io import MANIFEST_NAME
from eitlab.lineshapes import LineshapeModel, fwhm
from eitlab.physics import TWO_PI, Spectrum, preset, single_pass_diffusion_linewidth
from eitlab.storage import StorageProtocol, decay_curve, double_readout, store_pulse

GRADIENTS = (0.0, 1.0, 2.0, 4.0)


def report(capsys, n, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}: {detail}")
    assert ok, detail


def _bisect(f, lo, hi, n=200):
    # plain bisection, f(lo) > 0 > f(hi)
    for _ in range(n):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_1_closed_form_widths(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    x_half = _bisect(lambda x: 0.5 - x * math.atan(1.0 / x), 1e-6, 10.0)
    for _ in range(100):
        om = 10 ** rng.uniform(4, 7)
        gam = 10 ** rng.uniform(8, 10)
        tt = 10 ** rng.uniform(-6, -2)
        s = om * om / gam
        lor = fwhm(LineshapeModel("lorentzian", {"rabi_control": om, "gamma": gam}))
        ty = fwhm(LineshapeModel("ty", {"rabi_control": om, "gamma": gam}))
        ex = fwhm(LineshapeModel("transit", {"transit_time": tt}))
        worst = max(worst, abs(lor / (2 * s) - 1), abs(ty / (2 * x_half * s) - 1),
                    abs(ex / (2 * math.log(2) / tt) - 1))
    elapsed = time.perf_counter() - start
    ty_coeff = 2 * x_half
    ok = worst < 1e-3 and abs(ty_coeff - 0.86) < 0.01 and elapsed < 1.0
    report(capsys, 1, "closed-form FWHM", ok,
           f"max rel error {worst:.1e} over 100 draws, TY coefficient {ty_coeff:.4f}, {elapsed:.2f} s")


def test_criterion_2_diffusion_oracles(capsys):
    start = time.perf_counter()
    r, D = 1.0, 1.0
    dt = 0.001 * r * r / D
    rng = np.random.default_rng(2)
    t = first_exit_times(r, D, dt, 100_000, rng)
    exit_ratio = float(np.mean(t)) / (r * r / (4 * D))
    msd = mean_squared_displacement(D, dt, 200, 100_000, rng)
    msd_dev = float(np.max(np.abs(msd / (4 * D * dt * np.arange(1, 201)) - 1)))
    elapsed = time.perf_counter() - start
    ok = abs(exit_ratio - 1) < 0.03 and msd_dev < 0.02 and not np.any(np.isnan(t)) and elapsed < 60
    report(capsys, 2, "diffusion oracles", ok,
           f"exit time / (r^2/4D) = {exit_ratio:.4f}, max MSD deviation {msd_dev:.4f}, {elapsed:.1f} s")


def test_criterion_3_ramsey_narrowing(capsys, scan_5torr, spectrum_5torr_power10):
    w_low = central_peak_width(scan_5torr[0])
    w_high = central_peak_width(spectrum_5torr_power10)
    single = single_pass_diffusion_linewidth(preset("ne5torr"))
    runtime = TIMINGS["scan_5torr"] + TIMINGS["spectrum_5torr_power10"]
    ok = (w_low is not None and w_high is not None and w_low <= 2600 and single / w_low >= 10
          and 0.5 < w_high / w_low < 2 and runtime < 600)
    report(capsys, 3, "Ramsey narrowing", ok,
           f"peak {w_low:.0f} Hz vs single-pass {single / 1e3:.1f} kHz (x{single / w_low:.1f}), "
           f"x10 power {w_high:.0f} Hz (ratio {w_high / w_low:.2f}), MC {runtime:.0f} s")


def test_criterion_4_gradient_suppression(capsys, scan_5torr, scan_100torr):
    widths, slopes, rms = {}, {}, {}
    for name, scan in (("ne5torr", scan_5torr), ("ne100torr", scan_100torr)):
        widths[name] = [central_peak_width(sp) for sp in scan]
        gamma = preset(name).optics.gamma
        rms[name] = [fit(scan[i], "ty", gamma=gamma).normalized_rms for i in (0, -1)]
        if all(w is not None for w in widths[name]):
            slopes[name] = float(np.polyfit(GRADIENTS, widths[name], 1)[0])
    mono = all(None not in w and np.all(np.diff(w) > 0) for w in widths.values())
    ok = (mono and len(slopes) == 2 and slopes["ne5torr"] > slopes["ne100torr"]
          and all(r[1] < r[0] for r in rms.values())
          and TIMINGS["scan_5torr"] + TIMINGS["scan_100torr"] < 1800)

    def fmt(ws):
        return "/".join("none" if w is None else f"{w:.0f}" for w in ws)

    report(capsys, 4, "gradient suppression", ok,
           f"5 Torr widths {fmt(widths['ne5torr'])} Hz, 100 Torr {fmt(widths['ne100torr'])} Hz, "
           f"slopes {slopes.get('ne5torr', math.nan):.0f} > {slopes.get('ne100torr', math.nan):.0f} Hz per mG/cm, "
           f"TY nRMS 5 Torr {rms['ne5torr'][0]:.4f}->{rms['ne5torr'][1]:.4f}, "
           f"100 Torr {rms['ne100torr'][0]:.4f}->{rms['ne100torr'][1]:.4f}")


def test_criterion_5_fit_fidelity(capsys, scan_5torr):
    start = time.perf_counter()
    ranked = {r.model: r for r in compare_models(scan_5torr[0], gamma=preset("ne5torr").optics.gamma)}
    gamma = TWO_PI * 300e6
    om = math.sqrt(TWO_PI * 2000.0 * gamma)
    f = np.linspace(-20e3, 20e3, 2501)
    d = TWO_PI * f
    truth = {"amplitude": 0.6, "baseline": 0.1, "rabi_control": om}
    t = 0.1 + 0.6 * om**4 / (om**4 + (d * gamma) ** 2) + np.random.default_rng(5).normal(0, 0.01, f.size)
    res = fit(Spectrum(d, t), "lorentzian", gamma=gamma)
    worst = max(abs(res.params[k] / v - 1) for k, v in truth.items())
    elapsed = time.perf_counter() - start
    ok = ranked["ty"].rms < ranked["lorentzian"].rms and worst < 0.05 and res.converged and elapsed < 60
    report(capsys, 5, "fit fidelity", ok,
           f"MC RMS TY {ranked['ty'].rms:.2e} < Lorentzian {ranked['lorentzian'].rms:.2e}, "
           f"noisy Lorentzian recovery worst {100 * worst:.2f}%, {elapsed:.1f} s")


def test_criterion_6_coil_solver(capsys):
    start = time.perf_counter()
    loop = circular_loop(3.0, 0.0)
    zs = np.linspace(-10, 10, 21)
    bz = biot_savart(loop, np.column_stack([np.zeros_like(zs), np.zeros_like(zs), zs]), warn=False)[:, 2]
    axis_err = float(np.max(np.abs(bz / np.array([loop_axis_field(3.0, z) for z in zs]) - 1)))
    wires = build_golay_set(CoilGeometry())
    x = 0.1 * np.arange(-12, 13)
    yz = 0.1 * np.arange(-3, 4)
    rep = curl_and_linearity_report(field_map(wires, x, yz, yz), linear_range=1.0)
    per_turn = gradient_at_center(wires)
    turns = turns_for_gradient(per_turn)
    dist = distortion_check(4e-3, 7.0, 0.132)
    elapsed = time.perf_counter() - start
    ok = (axis_err < 1e-6 and rep.curl_residual < 1e-3 and rep.divergence_residual < 1e-3
          and rep.linearity_deviation < 0.05 and turns <= 100 and abs(dist.ratio - 0.075) < 0.001 and dist.ok
          and elapsed < 60)
    report(capsys, 6, "coil solver", ok,
           f"loop axis error {axis_err:.1e}, curl {rep.curl_residual:.1e}, div {rep.divergence_residual:.1e}, "
           f"linearity {100 * rep.linearity_deviation:.2f}%, {1e3 * per_turn:.2f} mG/(cm A) per turn -> "
           f"{turns} turns, distortion {dist.ratio:.4f}, {elapsed:.1f} s")


def test_criterion_7_stored_light(capsys, spectrum_storage):
    start = time.perf_counter()
    cfg = preset("storage")
    proto = StorageProtocol()
    curve = decay_curve(proto, cfg, [20e-6, 50e-6, 100e-6, 200e-6, 500e-6, 1e-3, 2e-3])
    T = curve.decay_time
    frac = 1.0 - store_pulse(StorageProtocol(write_power=50e-6, pulse_width=1e-3), cfg)[1]
    t_list = [10e-6, 100e-6, 1e-3, 3e-3, 10e-3]
    ratios = np.array([p.ratio for p in double_readout(proto, cfg, t_list)])
    frozen = np.array([p.ratio for p in double_readout(proto, cfg.replace(gas={"diffusion_coefficient": 0.0}),
                                                       t_list)])
    elapsed = time.perf_counter() - start + TIMINGS["spectrum_storage"]
    w_mc = central_peak_width(spectrum_storage)
    product = w_mc * math.pi * T
    ok = (abs(T / 500e-6 - 1) < 0.30 and abs(frac - 0.5) <= 0.1 and np.all(np.diff(ratios) > 0)
          and abs(ratios[-1] - 1) < 0.10 and np.ptp(frozen) < 1e-9 * frozen[0]
          and abs(w_mc - 600) < 0.05 * 600 and 0.5 <= product <= 2 and elapsed < 600)
    report(capsys, 7, "stored light", ok,
           f"MC peak {w_mc:.0f} Hz, 1/e time {1e6 * T:.0f} us (1/(pi T) = {curve.linewidth_hz:.0f} Hz), "
           f"FWHM*pi*T = {product:.2f}, stored fraction {frac:.3f}, double-readout ratios "
           f"{'/'.join(f'{r:.3f}' for r in ratios)}, D=0 spread {np.ptp(frozen):.1e}, {elapsed:.0f} s")


def _read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != MANIFEST_NAME}


def test_criterion_8_determinism(capsys, tmp_path):
    cfg = preset("ne5torr")
    grid = TWO_PI * np.linspace(-5e3, 5e3, 401)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        runs = [gradient_scan(cfg, [0.0, 2e-3], grid, 5000, seed=11, workers=w) for w in (1, 1, 4)]
    mc_same = all(np.array_equal(a.transmissions, b.transmissions)
                  and np.array_equal(a.metadata["stderr"], b.metadata["stderr"])
                  for r in runs[1:] for a, b in zip(runs[0], r))
    st = [decay_curve(StorageProtocol(), preset("storage"), [2e-5, 2e-4, 1e-3], workers=w) for w in (1, 1, 3)]
    dr = [double_readout(StorageProtocol(), preset("storage"), [1e-5, 1e-3], workers=w) for w in (1, 3)]
    st_same = (all(np.array_equal(st[0].areas, s.areas) and st[0].decay_time == s.decay_time for s in st[1:])
               and [p.ratio for p in dr[0]] == [p.ratio for p in dr[1]])
    cli_same = True
    mc_args = ["--ntraj", "3000", "--grid=-5000,5000,201", "--gradients", "0,2"]
    st_args = ["--preset", "storage", "--taus", "2e-5,5e-4", "--T-list", "1e-5,1e-3", "--n-grid", "64"]
    for cmd, extra in (("mc-spectrum", mc_args), ("store", st_args)):
        a, b, c = tmp_path / f"{cmd}_a", tmp_path / f"{cmd}_b", tmp_path / f"{cmd}_c"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            codes = [run([cmd, "--out", str(a), *extra]),
                     run([cmd, "--out", str(b), "--manifest", str(a / MANIFEST_NAME)])]
            codes.append(run([cmd, "--out", str(c), "--workers", "3", *extra]) if cmd == "mc-spectrum" else 0)
        same = _read_all(a) == _read_all(b) and (cmd != "mc-spectrum" or _read_all(a) == _read_all(c))
        h = [json.loads((p / MANIFEST_NAME).read_text())["input_hash"] for p in (a, b)]
        cli_same = cli_same and codes == [0, 0, 0] and same and h[0] == h[1]
    ok = mc_same and st_same and cli_same
    report(capsys, 8, "determinism", ok,
           f"MC reruns/workers identical: {mc_same}, storage identical: {st_same}, "
           f"CLI manifest replay and worker count identical: {cli_same}")
