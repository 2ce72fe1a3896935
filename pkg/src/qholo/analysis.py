"""Quantitative evaluation: phase steps, bar contrast, noise and OD sweeps."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import ComplexObject, FrameStack, InterferometerModel, PhaseStepSchedule, Rect
from .errors import DegenerateError, DomainError, GeometryError, RegionError, ShapeError
from .forward import (
    OBJECT_STREAM,
    REFERENCE_STREAM,
    BarGroupSpec,
    CameraSpec,
    od_factor,
    simulate_background,
    simulate_stack,
)
from .pipeline import FilterConfig, HologramResult, reconstruct_hologram, subset_frames

RAYLEIGH_THRESHOLD = 0.142
MIN_REGION_PX = 25
SAMPLE_FRACTION = 0.3  # central part of each bar/gap that is sampled
PROFILE_FRACTION = 0.6  # central part of the bar length that is averaged

# output of calibrate_psf_sigma on the default 500x500 target, frozen
CALIBRATED_PSF_SIGMA = 49.75e-6  # m
NOISE_VISIBILITY = 0.3

# measured bar-pattern contrasts (1000 ms, 0.82 pi step): frequency ->
# (square V, square H, sine V, sine H); None where no value was measured
MEASURED_CONTRASTS = {
    5.0: ((0.60, 0.06), (0.62, 0.06), (0.47, 0.06), (0.48, 0.06)),
    5.6: ((0.53, 0.07), (0.45, 0.08), (0.42, 0.06), (0.35, 0.07)),
    6.3: ((0.36, 0.09), (0.28, 0.09), (0.29, 0.08), (0.22, 0.08)),
    7.1: ((0.18, 0.10), (0.12, 0.10), (0.14, 0.09), (0.09, 0.09)),
    8.0: ((0.07, 0.10), None, (0.06, 0.09), None),
}
MEASURED_LINE_PAIR_MM = {5.0: 0.200, 5.6: 0.178, 6.3: 0.158, 7.1: 0.140, 8.0: 0.125}
MEASURED_RESOLVABLE = {5.0: True, 5.6: True, 6.3: True, 7.1: False, 8.0: False}


@dataclass(frozen=True)
class PhaseStepEstimate:
    mean_step: float
    std: float
    region_in: Rect
    region_out: Rect
    n_sets: int = 1
    set_std: float = 0.0  # spread of the per-set steps
    steps: Tuple[float, ...] = ()


@dataclass(frozen=True)
class ContrastRow:
    line_pair_mm: float
    frequency: float
    square_contrast_v: float
    square_contrast_h: float
    square_uncertainty_v: float = 0.0
    square_uncertainty_h: float = 0.0

    @property
    def sine_contrast_v(self) -> float:
        return sine_contrast(self.square_contrast_v)

    @property
    def sine_contrast_h(self) -> float:
        return sine_contrast(self.square_contrast_h)

    @property
    def sine_uncertainty_v(self) -> float:
        return sine_contrast(self.square_uncertainty_v)

    @property
    def sine_uncertainty_h(self) -> float:
        return sine_contrast(self.square_uncertainty_h)

    @property
    def resolvable_v(self) -> bool:
        return rayleigh_resolvable(self.sine_contrast_v)

    @property
    def resolvable_h(self) -> bool:
        return rayleigh_resolvable(self.sine_contrast_h)


@dataclass(frozen=True)
class NoiseReport:
    exposure: float
    m_images: int
    phase_noise: float
    modulation_noise: float
    n_sets: int
    phase_noise_std: float = 0.0
    modulation_noise_std: float = 0.0
    transmission_noise: float = 0.0
    phase_step: Optional[PhaseStepEstimate] = None


@dataclass(frozen=True)
class OdRow:
    od: float
    region: int
    relative_modulation: float
    std: float


def _check_region(region: Rect, shape, name):
    if not region.within(shape):
        raise RegionError(f"{name} {region.as_tuple()} lies outside the {shape} image")
    if region.area < MIN_REGION_PX:
        raise RegionError(f"{name} has {region.area} px, need >= {MIN_REGION_PX}")


def _phase_map(result):
    if isinstance(result, HologramResult):
        return result.absolute_phase
    return np.asarray(result, dtype=float)


def estimate_phase_step(result, region_in: Rect, region_out: Rect) -> PhaseStepEstimate:
    """Mean phase difference between a feature region and a reference region.

    ``result`` is a ``HologramResult`` or a bare phase map.
    """
    phase = _phase_map(result)
    _check_region(region_in, phase.shape, "region_in")
    _check_region(region_out, phase.shape, "region_out")
    if region_in.overlaps(region_out):
        raise RegionError("region_in and region_out overlap")
    inside = phase[region_in.slices]
    outside = phase[region_out.slices]
    step = float(np.mean(inside) - np.mean(outside))
    std = float(np.hypot(np.std(inside), np.std(outside)))
    return PhaseStepEstimate(step, std, region_in, region_out, 1, 0.0, (step,))


def combine_step_estimates(estimates: Sequence[PhaseStepEstimate]) -> PhaseStepEstimate:
    """Average per-set estimates; the std adds the set-to-set spread to the
    mean within-set spatial variance."""
    steps = np.array([e.mean_step for e in estimates])
    spatial = np.array([e.std for e in estimates])
    set_std = float(np.std(steps, ddof=1)) if len(steps) > 1 else 0.0
    std = float(np.sqrt(np.mean(spatial**2) + set_std**2))
    first = estimates[0]
    return PhaseStepEstimate(float(np.mean(steps)), std, first.region_in, first.region_out,
                             len(estimates), set_std, tuple(float(s) for s in steps))


def _sample_levels(profile, centers, half_width):
    coords = np.arange(profile.size) + 0.5
    levels = []
    for c in centers:
        sel = np.abs(coords - c) <= half_width
        if not sel.any():
            sel = np.zeros(profile.size, dtype=bool)
            sel[int(np.clip(np.floor(c), 0, profile.size - 1))] = True
        levels.append(float(np.mean(profile[sel])))
    return np.array(levels)


def bar_profile(image, group: BarGroupSpec):
    """Profile across the bars, averaged over the central part of the bar length."""
    pos = group.position
    block = np.asarray(image, dtype=float)[pos.slices]
    if group.orientation == "horizontal":
        block = block.T
    length = block.shape[0]
    trim = int(round(length * (1 - PROFILE_FRACTION) / 2))
    core = block[trim:length - trim] if length - 2 * trim >= 1 else block
    return core.mean(axis=0)


def bar_contrast(phase_image, group: BarGroupSpec, expected_step: float):
    """Square-wave contrast of one bar group on a phase image.

    The profile is normalized by ``expected_step`` and sampled at the central
    30% of each bar and gap. Returns ``(contrast, uncertainty)`` where the
    uncertainty propagates the scatter of the individual bar and gap levels.
    """
    phase_image = np.asarray(phase_image, dtype=float)
    if expected_step == 0:
        raise DomainError("expected_step must be non-zero")
    if not group.position.within(phase_image.shape):
        raise RegionError(f"bar group {group.label} lies outside the image")
    bw = group.bar_width_px
    across = group.position.width if group.orientation == "vertical" else group.position.height
    if bw < 1 or across < 5 * bw - 1:
        n_bars = int(min(3, (across + bw) // (2 * bw))) if bw >= 1 else 0
        raise GeometryError(f"only {n_bars} bars of {group.label} can be resolved in its box")
    profile = bar_profile(phase_image, group) / expected_step
    half = SAMPLE_FRACTION * bw / 2
    bars = _sample_levels(profile, [(2 * k + 0.5) * bw for k in range(3)], half)
    gaps = _sample_levels(profile, [(2 * k + 1.5) * bw for k in range(2)], half)
    p_max, p_min = bars.mean(), gaps.mean()
    denom = p_max + p_min
    if denom <= 0:
        return 0.0, 0.0
    contrast = max((p_max - p_min) / denom, 0.0)
    d_max = 2 * p_min / denom**2
    d_min = -2 * p_max / denom**2
    uncertainty = float(np.hypot(d_max * np.std(bars, ddof=1), d_min * np.std(gaps, ddof=1)))
    return float(contrast), uncertainty


def sine_contrast(square_contrast: float) -> float:
    """Fundamental-frequency contrast of a bar target: square contrast times pi/4."""
    if square_contrast < 0:
        raise DomainError("contrast must be >= 0")
    return square_contrast * np.pi / 4


def rayleigh_resolvable(sine: float) -> bool:
    if sine < 0:
        raise DomainError("contrast must be >= 0")
    return bool(sine >= RAYLEIGH_THRESHOLD)


def contrast_table(phase_image, groups: Sequence[BarGroupSpec], expected_step: float) -> List[ContrastRow]:
    """One row per frequency with both orientations, highest line pair first."""
    by_freq = {}
    for g in groups:
        by_freq.setdefault(round(g.frequency, 6), {})[g.orientation] = g
    rows = []
    for freq in sorted(by_freq):
        pair = by_freq[freq]
        cv, uv = bar_contrast(phase_image, pair["vertical"], expected_step)
        ch, uh = bar_contrast(phase_image, pair["horizontal"], expected_step)
        rows.append(ContrastRow(pair["vertical"].line_pair_length, freq, cv, ch, uv, uh))
    return rows


def snr(stack: FrameStack, region: Rect) -> float:
    """Mean/std over ``region``, averaged over the frames."""
    values = []
    for frame in stack.frames:
        patch = frame[region.slices]
        sd = np.std(patch)
        if sd == 0:
            raise DegenerateError("zero standard deviation in the flat region")
        values.append(np.mean(patch) / sd)
    return float(np.mean(values))


def snr_gain(raw_stack: FrameStack, filtered_stack: FrameStack, flat_region: Rect) -> float:
    if raw_stack.frames.shape != filtered_stack.frames.shape:
        raise ShapeError("raw and filtered stacks differ in shape")
    _check_region(flat_region, raw_stack.shape, "flat_region")
    return snr(filtered_stack, flat_region) / snr(raw_stack, flat_region)


def _simulate_pair(obj, model, schedule, camera, set_index, filters):
    """Object and reference stacks plus background-aware filters for one set."""
    reference = ComplexObject.empty(obj.shape, obj.pixel_pitch)
    obj_stack = simulate_stack(obj, model, schedule, camera, OBJECT_STREAM, set_index)
    ref_stack = simulate_stack(reference, model, schedule, camera, REFERENCE_STREAM, set_index)
    if camera.dark_background > 0:
        filters = replace(filters, background=simulate_background(camera, obj.shape, set_index))
    return obj_stack, ref_stack, filters


def noise_sweep(obj: ComplexObject, model: InterferometerModel, exposures, m_values, n_sets: int,
                camera: CameraSpec, flat_region: Rect, filters: FilterConfig = FilterConfig(),
                step_regions: Optional[Tuple[Rect, Rect]] = None) -> List[NoiseReport]:
    """Phase and modulation noise over an (exposure, M) grid.

    Each set records a 12-frame base stack per exposure and takes the M-frame
    subsets of it, so all M share the same photons. Noise is the spatial std
    over ``flat_region``; reported values are means over sets with the
    set-to-set std alongside.
    """
    m_values = list(m_values)
    if not set(m_values) <= {3, 4, 6, 12}:
        raise DomainError(f"M values must come from (3, 4, 6, 12), got {m_values}")
    if any(not e > 0 for e in exposures):
        raise DomainError("exposures must be > 0")
    if n_sets < 1:
        raise DomainError("n_sets must be >= 1")
    _check_region(flat_region, obj.shape, "flat_region")
    base = PhaseStepSchedule.canonical(12)
    reports = []
    for exposure in exposures:
        cam = replace(camera, exposure=float(exposure))
        per_m = {m: {"phase": [], "mod": [], "trans": [], "steps": []} for m in m_values}
        for s in range(n_sets):
            obj_stack, ref_stack, set_filters = _simulate_pair(obj, model, base, cam, s, filters)
            for m in m_values:
                result = reconstruct_hologram(subset_frames(obj_stack, m), subset_frames(ref_stack, m),
                                              set_filters)
                acc = per_m[m]
                acc["phase"].append(np.std(result.absolute_phase[flat_region.slices]))
                acc["mod"].append(np.std(result.reconstruction_object.modulation[flat_region.slices]))
                acc["trans"].append(np.std(result.transmission[flat_region.slices]))
                if step_regions is not None:
                    acc["steps"].append(estimate_phase_step(result, *step_regions))
        for m in m_values:
            acc = per_m[m]
            spread = (lambda v: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
            reports.append(NoiseReport(
                exposure=float(exposure),
                m_images=m,
                phase_noise=float(np.mean(acc["phase"])),
                modulation_noise=float(np.mean(acc["mod"])),
                n_sets=n_sets,
                phase_noise_std=spread(acc["phase"]),
                modulation_noise_std=spread(acc["mod"]),
                transmission_noise=float(np.mean(acc["trans"])),
                phase_step=combine_step_estimates(acc["steps"]) if acc["steps"] else None,
            ))
    return reports


def od_sweep(base_object: ComplexObject, od_values, model: InterferometerModel, camera: CameraSpec,
             regions: Sequence[Rect], m: int = 12, n_sets: int = 1,
             filters: FilterConfig = FilterConfig(), convention: str = "amplitude") -> List[OdRow]:
    """Mean referenced transmission per region for a whole-field OD filter.

    Values are relative to the OD 0 measurement of the same region and set,
    so the object's own transmission and edge losses cancel.
    """
    if any(not od >= 0 for od in od_values):
        raise DomainError("OD values must be >= 0")
    regions = list(regions)
    if not regions:
        raise DomainError("od_sweep needs at least one region")
    for i, r in enumerate(regions):
        _check_region(r, base_object.shape, f"region {i}")
    schedule = PhaseStepSchedule.canonical(m)

    def measure(obj, set_index):
        obj_stack, ref_stack, f = _simulate_pair(obj, model, schedule, camera, set_index, filters)
        result = reconstruct_hologram(obj_stack, ref_stack, f)
        return [float(np.mean(result.transmission[r.slices])) for r in regions]

    rows = []
    baseline = [measure(base_object, s) for s in range(n_sets)]
    for k, od in enumerate(od_values):
        factor = od_factor(od, convention)
        obj = ComplexObject(base_object.transmission * factor, base_object.phase, base_object.pixel_pitch)
        # every OD setting, OD 0 included, gets its own noise realization
        values = np.array([measure(obj, (k + 1) * n_sets + s) for s in range(n_sets)])
        ratios = values / np.array(baseline)
        for i in range(len(regions)):
            col = ratios[:, i]
            std = float(np.std(col, ddof=1)) if n_sets > 1 else 0.0
            rows.append(OdRow(float(od), i, float(np.mean(col)), std))
    return rows


def calibrate_flux(obj: ComplexObject, model: InterferometerModel, camera: CameraSpec,
                   target_phase_noise: float, flat_region: Rect, exposure: float = 0.5, m: int = 4,
                   n_sets: int = 15, filters: FilterConfig = FilterConfig(), rtol: float = 0.03,
                   max_iter: int = 10):
    """Mean flux at which the phase noise at ``(exposure, m)`` hits the target.

    The first update assumes shot-noise scaling ``1/sqrt(flux)``; later ones
    use the log-log slope of the last two trials, which absorbs read noise and
    filtering. Returns ``(flux, report)`` of the trial closest to the target.
    """
    if not target_phase_noise > 0:
        raise DomainError("target_phase_noise must be > 0")
    flux = model.mean_flux
    if not flux > 0:
        raise DomainError("calibration needs a positive starting flux")
    trials = []
    for _ in range(max_iter):
        trial = replace(model, mean_flux=flux)
        report = noise_sweep(obj, trial, [exposure], [m], n_sets, camera, flat_region, filters)[0]
        trials.append((flux, report))
        if abs(report.phase_noise / target_phase_noise - 1) <= rtol:
            break
        slope = -0.5
        if len(trials) > 1:
            (f0, r0), (f1, r1) = trials[-2], trials[-1]
            if f0 != f1 and r0.phase_noise > 0 and r1.phase_noise > 0:
                slope = np.log(r1.phase_noise / r0.phase_noise) / np.log(f1 / f0)
            slope = float(np.clip(slope, -1.0, -0.1))
        flux *= float(np.exp(np.log(target_phase_noise / report.phase_noise) / slope))
    return min(trials, key=lambda fr: abs(fr[1].phase_noise / target_phase_noise - 1))


def _contrast_error(rows):
    err = []
    for row in rows:
        ref = MEASURED_CONTRASTS.get(round(row.frequency, 1))
        if ref is None:
            continue
        err.append(row.square_contrast_v - ref[0][0])
        if ref[1] is not None:
            err.append(row.square_contrast_h - ref[1][0])
    return float(np.sqrt(np.mean(np.square(err))))


def _pattern_matches(rows):
    return all(
        r.resolvable_v == MEASURED_RESOLVABLE[round(r.frequency, 1)]
        and r.resolvable_h == MEASURED_RESOLVABLE[round(r.frequency, 1)]
        for r in rows if round(r.frequency, 1) in MEASURED_RESOLVABLE
    )


def resolution_table(obj: ComplexObject, model: InterferometerModel, camera: CameraSpec,
                     groups: Sequence[BarGroupSpec], expected_step: float, m: int = 4,
                     filters: FilterConfig = FilterConfig()) -> List[ContrastRow]:
    schedule = PhaseStepSchedule.canonical(m)
    obj_stack, ref_stack, f = _simulate_pair(obj, model, schedule, camera, 0, filters)
    result = reconstruct_hologram(obj_stack, ref_stack, f)
    return contrast_table(result.absolute_phase, groups, expected_step)


def calibrate_psf_sigma(obj: ComplexObject, model: InterferometerModel, groups: Sequence[BarGroupSpec],
                        expected_step: float, sigmas=None, filters: FilterConfig = FilterConfig(),
                        refine: float = 0.25e-6):
    """PSF width that reproduces the measured resolvability pattern.

    Scans ``sigmas`` (meters, noiseless simulation), keeps the candidates whose
    Rayleigh flags match the measured table, and returns the one with the
    smallest RMS square-contrast error after a local refinement.
    """
    if sigmas is None:
        sigmas = np.arange(40e-6, 60.5e-6, 1e-6)
    camera = CameraSpec(exposure=1.0, read_noise_sigma=0.0, shot_noise=False)

    def score(sigma):
        rows = resolution_table(obj, replace(model, psf_sigma=float(sigma)), camera, groups,
                                expected_step, 4, filters)
        return (_contrast_error(rows) if _pattern_matches(rows) else np.inf), rows

    scored = [(score(s)[0], float(s)) for s in sigmas]
    best_err, best = min(scored)
    if not np.isfinite(best_err):
        raise DegenerateError("no PSF width in the scan reproduces the resolvability pattern")
    step = float(np.min(np.diff(np.sort(sigmas)))) if len(sigmas) > 1 else 0.0
    if refine and step > refine:
        fine = np.arange(best - step, best + step + refine / 2, refine)
        scored = [(score(s)[0], float(s)) for s in fine if s > 0]
        best_err, best = min(scored)
    return best, best_err
