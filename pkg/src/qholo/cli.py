"""``qholo`` command-line entry point.

Verbs: ``simulate``, ``reconstruct`` and ``analyze {phase-step, resolution,
noise, od-sweep, snr}``. Every command writes a ``manifest.json`` that records
the resolved config, the inputs and the sha256 of every output; passing that
manifest back via ``--config`` reproduces the outputs byte for byte.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from .config import RunConfig, load_config
from .core import ComplexObject, ImageGrid, PhaseStepSchedule
from .errors import (
    ConfigError,
    DegenerateError,
    GeometryError,
    HoloError,
    RangeError,
    RegionError,
    ResolutionError,
    ScheduleError,
    ShapeError,
)
from .forward import (
    OBJECT_STREAM,
    REFERENCE_STREAM,
    make_object,
    object_layout,
    od_factor,
    regions_dict,
    simulate_background,
    simulate_stack,
)
from .io import (
    file_digest,
    read_frame,
    read_raster,
    read_stack,
    tree_digests,
    write_frame,
    write_json,
    write_raster,
    write_report,
    write_stack,
)
from .pipeline import filter_stack, reconstruct_hologram, subset_frames, subset_indices

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
ANALYSES = ("phase-step", "resolution", "noise", "od-sweep", "snr")


def _prepare_out(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, cfg: RunConfig, inputs=None, subcommand=None):
    inputs = inputs or {}
    digests = {k: file_digest(v) for k, v in sorted(inputs.items())
               if isinstance(v, str) and Path(v).is_file()}
    for k, v in sorted(inputs.items()):
        if isinstance(v, str) and Path(v).is_dir():
            for rel, h in tree_digests(v).items():
                digests[f"{k}/{rel}"] = h
    write_json(out / "manifest.json", {
        "command": command,
        "subcommand": subcommand,
        "config": cfg.to_dict(),
        "inputs": inputs,
        "input_digests": digests,
        "outputs": tree_digests(out),
        "version": __version__,
    })


# simulate

def cmd_simulate(cfg: RunConfig, out):
    """Object stack, reference stack, dark frame and ground-truth maps."""
    out = _prepare_out(out)
    spec = cfg.object_spec()
    obj = make_object(spec)
    model = cfg.model()
    camera = cfg.camera_spec()
    schedule = PhaseStepSchedule.canonical(cfg.record_m)
    reference = ComplexObject.empty(obj.shape, obj.pixel_pitch)
    obj_stack = simulate_stack(obj, model, schedule, camera, OBJECT_STREAM)
    ref_stack = simulate_stack(reference, model, schedule, camera, REFERENCE_STREAM)
    write_stack(out / "object", obj_stack, cfg.seed)
    write_stack(out / "reference", ref_stack, cfg.seed)
    write_frame(out / "background", simulate_background(camera, obj.shape), camera.exposure, 0.0, cfg.seed)
    write_raster(out / "truth_phase.f32", ImageGrid(obj.phase, "radians"))
    write_raster(out / "truth_transmission.f32", ImageGrid(obj.transmission, "dimensionless"))
    write_json(out / "layout.json", regions_dict(object_layout(spec)))
    _write_manifest(out, "simulate", cfg)
    return out


# reconstruct

def _find_background(directory):
    for name in ("background.pgm", "background.f64"):
        p = Path(directory) / name
        if p.exists():
            return str(p)
    return None


def cmd_reconstruct(cfg: RunConfig, object_path, reference_path, out, background_path=None, m=None):
    """Absolute phase, transmission, degenerate mask and a metrics report."""
    for label, p in (("object stack", object_path), ("reference stack", reference_path),
                     ("background frame", background_path)):
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"{label} not found: {p}")
    out = _prepare_out(out)
    t0 = time.perf_counter()
    obj_stack = read_stack(object_path)
    ref_stack = read_stack(reference_path)
    if obj_stack.schedule != ref_stack.schedule:
        raise ScheduleError(
            f"object stack has {obj_stack.m} steps, reference stack {ref_stack.m}; schedules must match"
        )
    m = obj_stack.m if m is None else m
    if m == obj_stack.m:
        indices = tuple(range(obj_stack.m))
    else:
        indices = subset_indices(obj_stack.m, m)
        obj_stack, ref_stack = subset_frames(obj_stack, m), subset_frames(ref_stack, m)
    background = read_frame(background_path) if background_path else None
    result = reconstruct_hologram(obj_stack, ref_stack, cfg.filter_config(background))
    elapsed = time.perf_counter() - t0

    write_raster(out / "absolute_phase.f32", ImageGrid(result.absolute_phase, "radians"))
    write_raster(out / "transmission.f32", ImageGrid(result.transmission, "dimensionless"))
    degenerate = result.flagged_mask | result.reconstruction_object.degenerate_mask
    write_raster(out / "degenerate_mask.f32", ImageGrid(degenerate.astype(float), "dimensionless"))

    metrics = {
        "m": m,
        "subset_indices": " ".join(str(i) for i in indices),
        "residues_object": result.residues_object,
        "residues_reference": result.residues_reference,
        "degenerate_pixels": int(np.count_nonzero(degenerate)),
        "overmodulated_pixels": int(np.count_nonzero(result.reconstruction_object.overmodulated_mask)),
    }
    layout = None
    if result.shape == cfg.shape:
        layout = object_layout(cfg.object_spec())
    if layout is not None:
        est = an.estimate_phase_step(result, layout.region_in, layout.region_out)
        metrics.update(phase_step=est.mean_step, phase_step_std=est.std,
                       phase_step_over_pi=est.mean_step / np.pi)
    write_report(out / "metrics.txt", "reconstruct", metrics)
    write_json(out / "summary.json", {"reconstruct": metrics})
    # wall-clock time is the one non-reproducible output; kept out of the manifest
    write_report(out / "timing.txt", "timing", {"reconstruct_seconds": elapsed})
    inputs = {"object": str(object_path), "reference": str(reference_path),
              "background": None if background_path is None else str(background_path), "m": m}
    _write_manifest(out, "reconstruct", cfg, inputs)
    return out


# analyze

def _layout(cfg):
    return object_layout(cfg.object_spec())


def _analyze_phase_step(cfg, out, source=None):
    layout = _layout(cfg)
    if source is not None:
        phase = read_raster(Path(source) / "absolute_phase.f32").values
        est = an.estimate_phase_step(phase, layout.region_in, layout.region_out)
        estimates = [est]
    else:
        obj = make_object(cfg.object_spec())
        model, camera = cfg.model(), cfg.camera_spec()
        schedule = PhaseStepSchedule.canonical(cfg.record_m)
        estimates = []
        for s in range(cfg.analysis.n_sets):
            obj_stack, ref_stack, f = an._simulate_pair(obj, model, schedule, camera, s, cfg.filter_config())
            if cfg.schedule.m != schedule.m:
                obj_stack, ref_stack = subset_frames(obj_stack, cfg.schedule.m), subset_frames(ref_stack, cfg.schedule.m)
            estimates.append(an.estimate_phase_step(reconstruct_hologram(obj_stack, ref_stack, f),
                                                    layout.region_in, layout.region_out))
    combined = an.combine_step_estimates(estimates)
    params = {
        "n_sets": combined.n_sets,
        "m": cfg.schedule.m,
        "exposure": cfg.camera.exposure,
        "design_step": cfg.object.phase_step,
        "mean_step": combined.mean_step,
        "std": combined.std,
        "set_std": combined.set_std,
        "mean_step_over_pi": combined.mean_step / np.pi,
        "std_over_pi": combined.std / np.pi,
    }
    rows = [(i, e.mean_step, e.std, e.mean_step / np.pi) for i, e in enumerate(estimates)]
    write_report(out / "phase_step.txt", "phase-step", params,
                 ["set", "step", "std", "step_over_pi"], rows)
    return {"params": params, "sets": [list(r) for r in rows]}


RESOLUTION_COLUMNS = ("line_pair_mm", "frequency", "square_v", "square_h", "sine_v", "sine_h",
                      "resolvable_v", "resolvable_h")


def _analyze_resolution(cfg, out):
    if cfg.object.kind != "usaf_target":
        raise ConfigError("resolution analysis needs object.kind = usaf_target", key="object.kind")
    spec = cfg.object_spec()
    obj = make_object(spec)
    groups = _layout(cfg).groups
    model = cfg.model()
    calibration_error = None
    if cfg.analysis.calibrate_psf:
        sigma, calibration_error = an.calibrate_psf_sigma(obj, model, groups, spec.phase_step,
                                                          filters=cfg.filter_config())
        model = replace(model, psf_sigma=sigma)
    rows = an.resolution_table(obj, model, cfg.camera_spec(), groups, spec.phase_step,
                               cfg.schedule.m, cfg.filter_config())
    table = []
    numeric = []
    for r in rows:
        table.append((
            f"{r.line_pair_mm:.4f}", f"{r.frequency:.1f}",
            f"{r.square_contrast_v:.4f}±{r.square_uncertainty_v:.4f}",
            f"{r.square_contrast_h:.4f}±{r.square_uncertainty_h:.4f}",
            f"{r.sine_contrast_v:.4f}", f"{r.sine_contrast_h:.4f}", str(r.resolvable_v).lower(), str(r.resolvable_h).lower(),
        ))
        numeric.append({
            "line_pair_mm": r.line_pair_mm, "frequency": r.frequency,
            "square_v": r.square_contrast_v, "square_h": r.square_contrast_h,
            "square_v_uncertainty": r.square_uncertainty_v, "square_h_uncertainty": r.square_uncertainty_h,
            "sine_v": r.sine_contrast_v, "sine_h": r.sine_contrast_h,
            "resolvable_v": r.resolvable_v, "resolvable_h": r.resolvable_h,
        })
    params = {"psf_sigma": model.psf_sigma, "m": cfg.schedule.m, "exposure": cfg.camera.exposure,
              "rayleigh_threshold": an.RAYLEIGH_THRESHOLD}
    if calibration_error is not None:
        params["calibration_rms_error"] = calibration_error
    write_report(out / "resolution.txt", "resolution", params, RESOLUTION_COLUMNS, table)
    return {"params": params, "rows": numeric}


def _analyze_noise(cfg, out, exposure_override=None, m_override=None):
    layout = _layout(cfg)
    obj = make_object(cfg.object_spec())
    exposures = [exposure_override] if exposure_override is not None else cfg.analysis.exposures
    m_values = [m_override] if m_override is not None else cfg.analysis.m_values
    reports = an.noise_sweep(obj, cfg.model(), exposures, m_values, cfg.analysis.n_sets,
                             cfg.camera_spec(), layout.region_out, cfg.filter_config(),
                             step_regions=(layout.region_in, layout.region_out))
    columns = ["exposure", "m", "phase_noise", "phase_noise_std", "phase_noise_over_pi",
               "modulation_noise", "modulation_noise_std", "transmission_noise", "step", "step_std"]
    rows = [(r.exposure, r.m_images, r.phase_noise, r.phase_noise_std, r.phase_noise / np.pi,
             r.modulation_noise, r.modulation_noise_std, r.transmission_noise,
             r.phase_step.mean_step, r.phase_step.std) for r in reports]
    params = {"n_sets": cfg.analysis.n_sets, "design_step": cfg.object.phase_step,
              "flat_region": " ".join(map(str, layout.region_out.as_tuple()))}
    write_report(out / "noise.txt", "noise", params, columns, rows)
    return {"params": params, "columns": columns, "rows": [list(r) for r in rows]}


def _analyze_od(cfg, out):
    layout = _layout(cfg)
    base = make_object(cfg.object_spec(od=0.0, od_region=None))
    convention = cfg.object.od_convention
    rows = an.od_sweep(base, cfg.analysis.od_values, cfg.model(), cfg.camera_spec(),
                       layout.flat_regions, cfg.schedule.m, cfg.analysis.n_sets,
                       cfg.filter_config(), convention)
    columns = ["od", "region", "relative_modulation", "std", "expected"]
    table = [(r.od, r.region, r.relative_modulation, r.std, od_factor(r.od, convention)) for r in rows]
    params = {"convention": convention, "n_sets": cfg.analysis.n_sets, "m": cfg.schedule.m,
              "regions": len(layout.flat_regions)}
    write_report(out / "od_sweep.txt", "od-sweep", params, columns, table)
    return {"params": params, "columns": columns, "rows": [list(r) for r in table]}


def _analyze_snr(cfg, out):
    spec = cfg.object_spec(kind="uniform", od=0.0, od_region=None)
    layout = object_layout(spec)
    obj = make_object(spec)
    schedule = PhaseStepSchedule.canonical(cfg.record_m)
    raw, _, f = an._simulate_pair(obj, cfg.model(), schedule, cfg.camera_spec(), 0, cfg.filter_config())
    if f.background is not None:
        raw = raw.replace_frames(np.maximum(raw.frames - f.background, 0.0))
        f = replace(f, background=None)
    filtered = filter_stack(raw, f)
    params = {
        "region": " ".join(map(str, layout.region_in.as_tuple())),
        "snr_raw": an.snr(raw, layout.region_in),
        "snr_filtered": an.snr(filtered, layout.region_in),
        "snr_gain": an.snr_gain(raw, filtered, layout.region_in),
        "lowpass_cutoff": cfg.filters.lowpass_cutoff,
        "gaussian_sigma": cfg.filters.gaussian_sigma,
    }
    write_report(out / "snr.txt", "snr", params)
    return {"params": params}


def cmd_analyze(cfg: RunConfig, subcommand, out, source=None, exposure=None, m=None):
    if subcommand not in ANALYSES:
        raise ConfigError(f"unknown analysis {subcommand!r}", key="subcommand")
    out = _prepare_out(out)
    if subcommand == "phase-step":
        summary = _analyze_phase_step(cfg, out, source)
    elif subcommand == "resolution":
        summary = _analyze_resolution(cfg, out)
    elif subcommand == "noise":
        summary = _analyze_noise(cfg, out, exposure, m)
    elif subcommand == "od-sweep":
        summary = _analyze_od(cfg, out)
    else:
        summary = _analyze_snr(cfg, out)
    write_json(out / "summary.json", {subcommand: summary})
    inputs = {"source": None if source is None else str(source), "exposure": exposure, "m": m}
    _write_manifest(out, "analyze", cfg, inputs, subcommand)
    return out


# argument handling

def _u64(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON/YAML config or a manifest from an earlier run")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--out", help="output directory")
    common.add_argument("--m", type=int, choices=(3, 4, 6, 12))
    common.add_argument("--exposure", type=float, help="seconds")
    common.add_argument("--no-noise", action="store_true", help="disable shot and read noise")

    parser = argparse.ArgumentParser(prog="qholo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate object/reference frame stacks")
    rec = sub.add_parser("reconstruct", parents=[common], help="reconstruct phase and transmission")
    rec.add_argument("--input", help="simulate output directory (object/, reference/, background)")
    rec.add_argument("--object", help="object stack directory")
    rec.add_argument("--reference", help="reference stack directory")
    rec.add_argument("--background", help="dark frame")
    ana = sub.add_parser("analyze", help="quantitative analyses")
    asub = ana.add_subparsers(dest="analysis", required=True)
    for name in ANALYSES:
        p = asub.add_parser(name, parents=[common])
        if name == "phase-step":
            p.add_argument("--from", dest="source", help="reconstruct output directory")
    return parser


def _resolve_config(args):
    """Config plus the recorded inputs when ``--config`` is a manifest of the same command."""
    cfg, manifest = load_config(args.config)
    inputs = {}
    if manifest is not None and manifest.get("command") == args.command and (
            args.command != "analyze" or manifest.get("subcommand") == args.analysis):
        inputs = manifest.get("inputs") or {}
    m = None if args.command == "reconstruct" else args.m  # reconstruct: frame subset instead
    exposure = args.exposure
    if args.command == "analyze" and args.analysis == "noise":
        exposure = None  # restricts the sweep instead
    cfg = cfg.with_overrides(seed=args.seed, m=m, exposure=exposure, no_noise=args.no_noise)
    return cfg, inputs


def run(argv=None):
    args = build_parser().parse_args(argv)
    cfg, inputs = _resolve_config(args)
    out = args.out
    if out is None:
        raise ConfigError("--out is required", key="out")
    if args.command == "simulate":
        cmd_simulate(cfg, out)
    elif args.command == "reconstruct":
        obj_path, ref_path, bg_path = args.object, args.reference, args.background
        if args.input:
            obj_path = obj_path or str(Path(args.input) / "object")
            ref_path = ref_path or str(Path(args.input) / "reference")
            bg_path = bg_path or _find_background(args.input)
        obj_path = obj_path or inputs.get("object")
        ref_path = ref_path or inputs.get("reference")
        bg_path = bg_path or inputs.get("background")
        m = args.m if args.m is not None else inputs.get("m")
        if obj_path is None or ref_path is None:
            raise ConfigError("reconstruct needs --object and --reference (or --input)", key="object")
        cmd_reconstruct(cfg, obj_path, ref_path, out, bg_path, m)
    else:
        source = getattr(args, "source", None) or inputs.get("source")
        exposure = args.exposure if args.exposure is not None else inputs.get("exposure")
        m = args.m if args.m is not None else inputs.get("m")
        if args.analysis != "noise":
            exposure = m = None
        cmd_analyze(cfg, args.analysis, out, source, exposure, m)
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"qholo: config error{key}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScheduleError, ShapeError, ResolutionError, GeometryError, RegionError) as exc:
        print(f"qholo: config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"qholo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DegenerateError, RangeError, ArithmeticError, HoloError) as exc:
        print(f"qholo: numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
