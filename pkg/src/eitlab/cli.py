"""Command-line front end.

    eitlab lineshape    closed-form spectra
    eitlab mc-spectrum  Monte-Carlo spectra, one CSV per gradient
    eitlab coil         field map and gradient report of the saddle coil set
    eitlab store        stored-light decay curve and double readout
    eitlab fit          fit a spectrum CSV to the lineshape models
    eitlab repro        figure-level pipelines (fig3, fig6, fig7, fig8, coil)

Exit codes: 0 success, 2 input or configuration error, 3 numerical
non-convergence.  Every run writes ``manifest.json`` next to its outputs;
``--manifest PATH`` replays a run from such a file.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .coils import (CoilGeometry, build_golay_set, curl_and_linearity_report, distortion_check, field_map,
                    gradient_at_center, turns_for_gradient)
from .diffusion import gradient_scan
from .fitting import MODELS, FitInputError, central_peak_analysis, compare_models, fit
from .io import MANIFEST_NAME, OutputSet, RunManifest, read_spectrum_csv
from .lineshapes import LineshapeModel, eval_lorentzian, eval_transit_exponential, eval_ty, fwhm, transit_time
from .physics import TWO_PI, ConfigError, ExperimentConfig, PRESETS, Spectrum, hz_to_rad, load_config, preset
from .storage import StorageProtocol, decay_curve, double_readout, store_pulse

DEFAULT_SEED = 20060215
EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 2, 3
REPRO_TARGETS = ("fig3", "fig6", "fig7", "fig8", "coil")
DEFAULT_TAUS = (20e-6, 50e-6, 100e-6, 200e-6, 500e-6, 1e-3, 2e-3)
DEFAULT_T_LIST = (10e-6, 100e-6, 1e-3, 3e-3, 10e-3)


class NonConvergence(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def parse_grid(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--grid expects MIN,MAX,N in Hz, got {text!r}")
    lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    if not (hi > lo and n >= 2):
        raise ConfigError(f"--grid needs MAX > MIN and N >= 2, got {text!r}")
    return lo, hi, n


def parse_list(text: str, name: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{name} expects a comma-separated list of numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"{name} is empty")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eitlab", description="EIT with diffusion of atomic coherence")
    p.add_argument("--version", action="version", version=f"eitlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, grid=None, seed=False):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", metavar="PATH", help="experiment configuration JSON")
        src.add_argument("--preset", choices=PRESETS, help="named configuration (default ne5torr)")
        sp.add_argument("--out", metavar="DIR", default=".", help="output directory")
        sp.add_argument("--manifest", metavar="PATH", help="replay the run recorded in a manifest")
        if grid:
            sp.add_argument("--grid", default=grid, help=f"detuning grid MIN,MAX,N in Hz (default {grid})")
        if seed:
            sp.add_argument("--seed", type=int, default=DEFAULT_SEED, help="RNG seed (unsigned 64-bit)")
            sp.add_argument("--ntraj", type=int, default=30000, help="number of trajectories")
            sp.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on it)")

    s = sub.add_parser("lineshape", help="closed-form lineshape CSV")
    common(s, grid="-10000,10000,2001")
    s.add_argument("--model", choices=MODELS + ("all",), default="all")

    s = sub.add_parser("mc-spectrum", help="Monte-Carlo spectra")
    common(s, grid="-20000,20000,2501", seed=True)
    s.add_argument("--gradients", default="0", help="gradients in mG/cm, comma separated")
    s.add_argument("--power-factor", type=float, default=1.0, help="scale the laser power")

    s = sub.add_parser("coil", help="saddle coil field map and report")
    s.add_argument("--out", metavar="DIR", default=".")
    s.add_argument("--manifest", metavar="PATH")
    s.add_argument("--z0", type=float, default=2.4)
    s.add_argument("--z1", type=float, default=16.2)
    s.add_argument("--radius", type=float, default=6.4)
    s.add_argument("--arc-angle", type=float, default=120.0)
    s.add_argument("--turns", type=int, default=1)
    s.add_argument("--current", type=float, default=1.0)
    s.add_argument("--bias", type=float, default=0.080, help="bias field B0 in G")
    s.add_argument("--gradient", type=float, default=4.0, help="gradient for the distortion check, mG/cm")
    s.add_argument("--length", type=float, default=7.0, help="cell length in cm")
    s.add_argument("--step", type=float, default=0.1, help="field map spacing in cm")

    s = sub.add_parser("store", help="stored-light decay and double readout")
    common(s)
    s.add_argument("--protocol", metavar="PATH", help="StorageProtocol JSON")
    s.add_argument("--taus", default=",".join(f"{t:g}" for t in DEFAULT_TAUS), help="storage times in s")
    s.add_argument("--T-list", dest="t_list", default=",".join(f"{t:g}" for t in DEFAULT_T_LIST),
                   help="double-readout dark times in s")
    s.add_argument("--n-grid", type=int, default=128)

    s = sub.add_parser("fit", help="fit a spectrum CSV")
    s.add_argument("input", metavar="CSV", help="spectrum CSV with header delta_hz,transmission")
    s.add_argument("--out", metavar="DIR", default=".")
    s.add_argument("--manifest", metavar="PATH")
    s.add_argument("--models", default="lorentzian,ty,transit")
    s.add_argument("--gamma-hz", type=float, default=300e6, help="excited-state width held fixed in the fit")

    s = sub.add_parser("repro", help="figure-level pipelines")
    s.add_argument("target", choices=REPRO_TARGETS)
    s.add_argument("--out", metavar="DIR", default=".")
    s.add_argument("--manifest", metavar="PATH")
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--ntraj", type=int, default=30000)
    s.add_argument("--workers", type=int, default=1)
    return p


def _resolve_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = preset(getattr(args, "preset", None) or "ne5torr")
    # one JSON round trip so a replay from the manifest sees identical floats
    return ExperimentConfig.from_dict(cfg.to_dict())


def _check_seed(seed):
    if not 0 <= seed < 2**64:
        raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {seed}")


def _grid(args):
    lo, hi, n = parse_grid(args.grid)
    return np.linspace(lo, hi, n)


def _arguments(args) -> dict:
    # workers do not change results, so they stay out of the manifest hash
    skip = {"command", "out", "manifest", "config", "preset", "workers"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def cmd_lineshape(args, cfg, out: OutputSet):
    f = _grid(args)
    d = hz_to_rad(f)
    o = cfg.optics
    models = MODELS if args.model == "all" else (args.model,)
    report = {}
    for m in models:
        if m == "lorentzian":
            t = eval_lorentzian(d, o.rabi_control, o.gamma, o.gamma_bc)
            model = LineshapeModel(m, {"rabi_control": o.rabi_control, "gamma": o.gamma, "gamma_bc": o.gamma_bc})
        elif m == "ty":
            t = eval_ty(d, o.rabi_control, o.gamma)
            model = LineshapeModel(m, {"rabi_control": o.rabi_control, "gamma": o.gamma})
        else:
            tt = transit_time(cfg.beam, cfg.gas)
            t = eval_transit_exponential(d, tt)
            model = LineshapeModel(m, {"transit_time": tt})
        out.add_csv(f"lineshape_{m}.csv", ["delta_hz", "transmission"], np.column_stack([f, t]))
        report[m] = {"fwhm_hz": fwhm(model) / TWO_PI, "params": model.params}
    out.add_json("lineshape_report.json", report)
    return EXIT_OK


def _gradient_label(g_mg):
    return f"{g_mg:g}".replace("-", "m").replace(".", "p")


def _pedestal_fwhm_hz(analysis):
    from .lineshapes import TY_HALF_WIDTH_ROOT

    w = analysis.pedestal.get("width_hz")
    return None if w is None else 2 * TY_HALF_WIDTH_ROOT * w


def cmd_mc_spectrum(args, cfg, out: OutputSet):
    _check_seed(args.seed)
    if args.ntraj < 1:
        raise ConfigError("--ntraj must be >= 1")
    if args.power_factor != 1.0:
        cfg = cfg.with_power(args.power_factor)
    grads_mg = parse_list(args.gradients, "--gradients")
    f = _grid(args)
    spectra = gradient_scan(cfg, [g * 1e-3 for g in grads_mg], hz_to_rad(f), args.ntraj, seed=args.seed,
                            workers=args.workers)
    summary = []
    for g, sp in zip(grads_mg, spectra):
        name = f"mc_spectrum_G{_gradient_label(g)}.csv"
        out.add_csv(name, ["delta_hz", "transmission", "stderr"],
                    np.column_stack([f, sp.transmissions, sp.metadata["stderr"]]))
        an = central_peak_analysis(sp)
        entry = {
            "gradient_mG_per_cm": g,
            "file": name,
            "narrow_peak_fwhm_hz": an.width_hz,
            "pedestal_fwhm_hz": _pedestal_fwhm_hz(an),
            "max_stderr": float(np.max(sp.metadata["stderr"])),
            "n_traj": args.ntraj,
        }
        if "distortion" in sp.metadata:
            entry["distortion"] = sp.metadata["distortion"].to_dict()
        summary.append(entry)
    out.add_json("mc_summary.json", {"spectra": summary})
    return EXIT_OK


def cmd_coil(args, cfg, out: OutputSet):
    try:
        geom = CoilGeometry(args.z0, args.z1, args.radius, args.arc_angle, args.turns, args.current)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 < args.step <= 0.1:
        raise ConfigError("--step must be in (0, 0.1] cm")
    wires = build_golay_set(geom)
    per_turn = gradient_at_center(wires)
    n = int(round(1.2 / args.step))
    x = args.step * np.arange(-n, n + 1)
    m = int(round(0.3 / args.step))
    yz = args.step * np.arange(-m, m + 1)
    fmap = field_map(wires, x, yz, yz)
    rep = curl_and_linearity_report(fmap)
    out.add_csv("fieldmap.csv", ["x", "y", "z", "Bx", "By", "Bz"], fmap.rows())
    dist = distortion_check(args.gradient * 1e-3, args.length, args.bias)
    out.add_json("coil_report.json", {
        "geometry": {"z0": geom.z0, "z1": geom.z1, "radius": geom.radius, "arc_angle": geom.arc_angle,
                     "turns": geom.turns, "current": geom.current},
        "gradient_per_ampere_turn_G_per_cm_A": per_turn,
        "gradient_per_ampere_G_per_cm_A": per_turn * geom.turns,
        "turns_for_40mG_per_cm_A": turns_for_gradient(per_turn),
        "map": rep.to_dict(),
        "distortion": {"gradient_G_per_cm": args.gradient * 1e-3, "length_cm": args.length, "bias_G": args.bias,
                       **dist.to_dict()},
    })
    return EXIT_OK


def _protocol(args):
    if args.protocol:
        try:
            return StorageProtocol.from_dict(json.loads(Path(args.protocol).read_text()))
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"protocol {args.protocol}: {exc}") from None
    return StorageProtocol()


def cmd_store(args, cfg, out: OutputSet):
    proto = _protocol(args)
    taus = parse_list(args.taus, "--taus")
    t_list = parse_list(args.t_list, "--T-list")
    if min(taus) < 0 or min(t_list) < 0:
        raise ConfigError("storage times must be >= 0")
    curve = decay_curve(proto, cfg, taus, n_grid=args.n_grid)
    out.add_csv("decay.csv", ["tau_s", "area"], np.column_stack([curve.taus, curve.areas]))
    for i, rec in enumerate(curve.records):
        out.add_csv(f"waveform_tau{i:02d}.csv", ["time_s", "amplitude"], rec.to_rows())
    pts = double_readout(proto, cfg, t_list, n_grid=args.n_grid)
    out.add_csv("double_readout.csv", ["T_s", "area_with", "area_without", "ratio"],
                [[p.T, p.area_with, p.area_without, p.ratio] for p in pts])
    _, transmitted = store_pulse(proto, cfg, args.n_grid)
    out.add_json("store_summary.json", {
        "protocol": proto.to_dict(),
        "stored_fraction": 1.0 - transmitted,
        "decay_time_s": None if curve.no_decay else curve.decay_time,
        "decay_time_stderr_s": curve.decay_time_stderr,
        "no_decay": curve.no_decay,
        "linewidth_hz": curve.linewidth_hz,
        "first_read_area": pts[0].first_read if pts else None,
    })
    return EXIT_OK


def _fit_outputs(spectrum: Spectrum, models, gamma, out: OutputSet, prefix=""):
    results = compare_models(spectrum, models=models, gamma=gamma)
    out.add_json(f"{prefix}fit_results.json", {"ranking": [r.model for r in results],
                                               "fits": [r.to_dict() for r in results]})
    cols = [spectrum.detunings_hz] + [r.residuals for r in results]
    out.add_csv(f"{prefix}residuals.csv", ["delta_hz"] + [f"residual_{r.model}" for r in results], np.column_stack(cols))
    return results


def cmd_fit(args, cfg, out: OutputSet):
    models = tuple(m.strip() for m in args.models.split(",") if m.strip())
    for m in models:
        if m not in MODELS:
            raise ConfigError(f"--models: unknown model {m!r}; choose from {', '.join(MODELS)}")
    try:
        spectrum = read_spectrum_csv(args.input)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.input}: {exc.strerror}") from None
    results = _fit_outputs(spectrum, models, TWO_PI * args.gamma_hz, out)
    if not all(r.converged for r in results):
        bad = [f"{r.model} ({r.message})" for r in results if not r.converged]
        out.add_json("nonconvergence.json", {"models": bad})
        raise NonConvergence("fit did not converge: " + ", ".join(bad))
    return EXIT_OK


FIG6_GRADIENTS = (0.0, 1.0, 2.0, 4.0)


def cmd_repro(args, cfg, out: OutputSet):
    _check_seed(args.seed)
    t = args.target
    if t == "fig3":
        cfg = preset("ne5torr")
        f = np.linspace(-20e3, 20e3, 2501)
        sp = gradient_scan(cfg, [0.0], hz_to_rad(f), args.ntraj, seed=args.seed, workers=args.workers)[0]
        out.add_csv("fig3_spectrum.csv", ["delta_hz", "transmission", "stderr"],
                    np.column_stack([f, sp.transmissions, sp.metadata["stderr"]]))
        results = _fit_outputs(sp, MODELS, cfg.optics.gamma, out, prefix="fig3_")
        cols = [f] + [r(sp.detunings) for r in results]
        out.add_csv("fig3_fits.csv", ["delta_hz"] + [f"fit_{r.model}" for r in results], np.column_stack(cols))
    elif t == "fig6":
        rows, summary = [], {}
        grids = {"ne5torr": np.linspace(-20e3, 20e3, 2501), "ne100torr": np.linspace(-5e3, 5e3, 1201)}
        widths = {}
        for name, f in grids.items():
            c = preset(name)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                spectra = gradient_scan(c, [g * 1e-3 for g in FIG6_GRADIENTS], hz_to_rad(f), args.ntraj,
                                        seed=args.seed, workers=args.workers)
            widths[name] = []
            for g, sp in zip(FIG6_GRADIENTS, spectra):
                an = central_peak_analysis(sp)
                ty = fit(sp, "ty", gamma=c.optics.gamma)
                widths[name].append(an.width_hz)
                summary.setdefault(name, []).append({"gradient_mG_per_cm": g, "narrow_peak_fwhm_hz": an.width_hz,
                                                     "ty_normalized_rms": ty.normalized_rms})
                out.add_csv(f"fig6_{name}_G{_gradient_label(g)}.csv", ["delta_hz", "transmission", "stderr"],
                            np.column_stack([f, sp.transmissions, sp.metadata["stderr"]]))
            summary[name + "_warnings"] = sorted({str(w.message) for w in caught})
        for i, g in enumerate(FIG6_GRADIENTS):
            rows.append([g] + [np.nan if widths[n][i] is None else widths[n][i] for n in grids])
        out.add_csv("fig6_widths.csv", ["gradient_mG_per_cm", "width_ne5torr_hz", "width_ne100torr_hz"], rows)
        out.add_json("fig6_summary.json", summary)
    elif t == "fig7":
        cfg = preset("storage")
        proto = StorageProtocol()
        curve = decay_curve(proto, cfg, DEFAULT_TAUS)
        out.add_csv("fig7_decay.csv", ["tau_s", "area"], np.column_stack([curve.taus, curve.areas]))
        for i, rec in enumerate(curve.records):
            out.add_csv(f"fig7_waveform_tau{i:02d}.csv", ["time_s", "amplitude"], rec.to_rows())
        out.add_json("fig7_summary.json", {"decay_time_s": curve.decay_time, "linewidth_hz": curve.linewidth_hz,
                                           "stored_fraction": 1.0 - store_pulse(proto, cfg)[1]})
    elif t == "fig8":
        proto = StorageProtocol()
        for name in ("storage", "ne100torr"):
            pts = double_readout(proto, preset(name), DEFAULT_T_LIST)
            out.add_csv(f"fig8_{name}.csv", ["T_s", "area_with", "area_without", "ratio"],
                        [[p.T, p.area_with, p.area_without, p.ratio] for p in pts])
    else:
        ns = argparse.Namespace(z0=2.4, z1=16.2, radius=6.4, arc_angle=120.0, turns=1, current=1.0,
                                bias=0.132, gradient=4.0, length=7.0, step=0.1)
        return cmd_coil(ns, cfg, out)
    return EXIT_OK


COMMANDS = {
    "lineshape": cmd_lineshape,
    "mc-spectrum": cmd_mc_spectrum,
    "coil": cmd_coil,
    "store": cmd_store,
    "fit": cmd_fit,
    "repro": cmd_repro,
}
NEEDS_CONFIG = {"lineshape", "mc-spectrum", "store"}


def _apply_manifest(args):
    man = RunManifest.load(args.manifest)
    if man.subcommand != args.command:
        raise ConfigError(f"manifest is for {man.subcommand!r}, not {args.command!r}")
    for k, v in man.arguments.items():
        if not hasattr(args, k):
            raise ConfigError(f"manifest argument {k!r} is not valid for {args.command}")
        setattr(args, k, v)
    return man


def run(argv=None) -> int:
    """Execute one subcommand; returns the process exit code."""
    start = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        out_dir = args.out
        if args.manifest:
            man = _apply_manifest(args)
            cfg = ExperimentConfig.from_dict(man.config) if man.config is not None else None
        else:
            cfg = _resolve_config(args) if args.command in NEEDS_CONFIG else None
        seed = getattr(args, "seed", None)
        manifest = RunManifest(args.command, cfg.to_dict() if cfg is not None else None, seed, _arguments(args))
        out = OutputSet(out_dir, manifest)
        code = COMMANDS[args.command](args, cfg, out)
    except NonConvergence as exc:
        print(f"eitlab: {exc}", file=sys.stderr)
        out.commit(time.perf_counter() - start)
        return EXIT_NONCONVERGED
    except (ConfigError, FitInputError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"eitlab: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    written = out.commit(time.perf_counter() - start)
    for path in written:
        print(path)
    print(Path(out_dir) / MANIFEST_NAME)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
