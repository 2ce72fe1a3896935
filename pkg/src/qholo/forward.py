"""Synthetic test objects and the camera model.

Objects are pure phase masks engraved to a design step, optionally
attenuated by an optical-density filter. The miniaturized USAF layout keeps
the physical bar sizes of the five analysed elements (5.0 to 8.0 lp/mm) and
places them on a grid of any pitch that samples them with at least 2 px.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import ndimage

from .core import (
    ComplexObject,
    FrameStack,
    InterferometerModel,
    PhaseStepSchedule,
    Rect,
    signal_rate,
)
from .errors import DomainError, GeometryError, RangeError, ResolutionError, ScheduleError

OBJECT_KINDS = ("usaf_target", "phase_disk", "happy_face", "uniform")
OD_CONVENTIONS = ("amplitude", "intensity")

# 500 px across the 6.1 mm field of view
DEFAULT_PITCH = 6.1e-3 / 500
IDLER_WAVELENGTH = 730e-9

USAF_FREQUENCIES = (5.0, 5.6, 6.3, 7.1, 8.0)  # lp/mm
MIN_FEATURE_PX = 2.0
MAX_COUNT = 2**16 - 1

# random stream roles; keys are (role, set_index, frame_index)
OBJECT_STREAM = 1
REFERENCE_STREAM = 2
BACKGROUND_STREAM = 3


@dataclass(frozen=True)
class ObjectSpec:
    kind: str = "usaf_target"
    phase_step: float = 0.82 * np.pi
    base_transmission: float = 1.0
    od: float = 0.0
    od_region: Optional[Rect] = None  # None: whole field
    od_convention: str = "amplitude"
    width: int = 500
    height: int = 500
    pixel_pitch: float = DEFAULT_PITCH
    supersample: int = 8  # sub-samples per pixel edge; 1 renders a binary mask

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise DomainError(f"unknown object kind {self.kind!r}")
        if not np.isfinite(self.phase_step):
            raise DomainError("phase_step must be finite")
        if not self.od >= 0:
            raise DomainError("od must be >= 0")
        if not 0 <= self.base_transmission <= 1:
            raise DomainError("base_transmission must lie in [0, 1]")
        if self.od_convention not in OD_CONVENTIONS:
            raise DomainError(f"od_convention must be one of {OD_CONVENTIONS}")
        if self.supersample < 1:
            raise DomainError("supersample must be >= 1")
        if self.width < 1 or self.height < 1 or not self.pixel_pitch > 0:
            raise DomainError("grid needs positive width, height and pixel_pitch")

    @property
    def shape(self):
        return (self.height, self.width)


@dataclass(frozen=True)
class BarGroupSpec:
    """One USAF element: three bars and two gaps of width ``line_pair_length/2``.

    ``orientation`` names the bar direction; vertical bars are resolved along
    x. ``position`` is the pixel box of the element, with the first bar starting
    at its leading edge.
    """

    line_pair_length: float  # mm
    orientation: str
    position: Rect
    pixel_pitch: float  # m

    def __post_init__(self):
        if self.orientation not in ("vertical", "horizontal"):
            raise DomainError(f"orientation must be vertical or horizontal, got {self.orientation!r}")
        if not self.line_pair_length > 0:
            raise DomainError("line_pair_length must be > 0")

    @classmethod
    def from_frequency(cls, frequency, orientation, position, pixel_pitch):
        return cls(1.0 / frequency, orientation, position, pixel_pitch)

    @property
    def frequency(self) -> float:
        return 1.0 / self.line_pair_length

    @property
    def bar_width(self) -> float:
        """Bar width in meters."""
        return self.line_pair_length * 1e-3 / 2

    @property
    def bar_width_px(self) -> float:
        return self.bar_width / self.pixel_pitch

    @property
    def period_px(self) -> float:
        return 2 * self.bar_width_px

    @property
    def frequency_px(self) -> float:
        """Fundamental frequency in cycles per pixel."""
        return 1.0 / self.period_px

    @property
    def label(self) -> str:
        return f"{self.frequency:.1f} lp/mm {self.orientation}"

    def contains(self, y, x):
        """Continuous-coordinate test for the three bars."""
        pos = self.position
        if self.orientation == "vertical":
            across, along, length = x - pos.col, y - pos.row, pos.height
        else:
            across, along, length = y - pos.row, x - pos.col, pos.width
        k = np.floor(across / self.bar_width_px)
        return (along >= 0) & (along < length) & (k >= 0) & (k <= 4) & (k % 2 == 0)

    def bar_mask(self, shape) -> np.ndarray:
        """Pixels whose center lies inside a bar."""
        rows, cols = np.indices(shape)
        return self.contains(rows + 0.5, cols + 0.5)


@dataclass(frozen=True)
class CameraSpec:
    exposure: float = 0.5
    read_noise_sigma: float = 2.0
    dark_background: float = 0.0
    seed: int = 0
    shot_noise: bool = True

    def __post_init__(self):
        if not self.exposure > 0:
            raise DomainError("exposure must be > 0")
        if not self.read_noise_sigma >= 0:
            raise DomainError("read_noise_sigma must be >= 0")
        if not self.dark_background >= 0:
            raise DomainError("dark_background must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    @property
    def noiseless(self) -> bool:
        return not self.shot_noise and self.read_noise_sigma == 0


@dataclass
class ObjectLayout:
    """Feature geometry and analysis regions of a synthesized object.

    ``contains(y, x)`` tests continuous pixel coordinates, pixel ``(i, j)``
    spanning ``[i, i+1) x [j, j+1)``.
    """

    region_in: Rect
    region_out: Rect
    contains: Callable[[np.ndarray, np.ndarray], np.ndarray]
    flat_regions: List[Rect] = field(default_factory=list)
    groups: List[BarGroupSpec] = field(default_factory=list)

    def coverage(self, shape, supersample=1, chunk_rows=32) -> np.ndarray:
        """Fraction of each pixel covered by features, from ``supersample**2`` samples."""
        s = int(supersample)
        if s < 1:
            raise DomainError("supersample must be >= 1")
        h, w = shape
        sub = (np.arange(s) + 0.5) / s
        xs = (np.arange(w)[:, None] + sub[None, :]).ravel()
        out = np.empty(shape)
        for r0 in range(0, h, chunk_rows):
            r1 = min(h, r0 + chunk_rows)
            ys = (np.arange(r0, r1)[:, None] + sub[None, :]).ravel()
            hits = self.contains(ys[:, None], xs[None, :])
            out[r0:r1] = hits.reshape(r1 - r0, s, w, s).mean(axis=(1, 3))
        return out

    def mask(self, shape) -> np.ndarray:
        """Pixels whose center lies inside a feature."""
        return self.coverage(shape, 1) > 0.5


def _disk_fn(center, radius):
    cy, cx = center

    def inside(y, x):
        return (y - cy) ** 2 + (x - cx) ** 2 <= radius**2

    return inside


def _rect_fn(rect: Rect):
    def inside(y, x):
        return ((y >= rect.row) & (y < rect.row + rect.height)
                & (x >= rect.col) & (x < rect.col + rect.width))

    return inside


def _union(*fns):
    def inside(y, x):
        out = fns[0](y, x)
        for fn in fns[1:]:
            out = out | fn(y, x)
        return out

    return inside


def _px(length_m, pitch):
    return int(round(length_m / pitch))


def usaf_layout(width=500, height=500, pixel_pitch=DEFAULT_PITCH) -> ObjectLayout:
    """Place the five analysed USAF elements in both orientations plus a step patch.

    Row one holds the vertical-bar elements, row two the horizontal-bar ones,
    and below them a large square patch serves for phase-step verification.
    """
    shape = (height, width)
    for f in USAF_FREQUENCIES:
        bw_px = 1e-3 / (2 * f) / pixel_pitch
        if bw_px < MIN_FEATURE_PX:
            raise ResolutionError(
                f"USAF element {f:.1f} lp/mm has {bw_px:.2f} px bars at "
                f"{pixel_pitch * 1e6:.2f} um pitch; need >= {MIN_FEATURE_PX} px"
            )
    spacing = _px(0.25e-3, pixel_pitch)
    margin = max(12, _px(0.6e-3, pixel_pitch))
    groups = []
    row = margin
    for orientation in ("vertical", "horizontal"):
        col = margin
        row_height = 0
        for f in USAF_FREQUENCIES:
            # 2.5 line pairs across, bar length five bar widths
            size = int(np.ceil(2.5e-3 / f / pixel_pitch))
            pos = Rect(row, col, size, size)
            groups.append(BarGroupSpec.from_frequency(f, orientation, pos, pixel_pitch))
            col += size + spacing
            row_height = max(row_height, size)
        if col - spacing + margin > width:
            raise GeometryError(f"USAF rows need {col - spacing + margin} px width, grid has {width}")
        row += row_height + spacing
    patch_size = _px(1.2e-3, pixel_pitch)
    patch = Rect(row, margin, patch_size, patch_size)
    if patch.row + patch.height + margin > height:
        raise GeometryError(f"USAF layout needs {patch.row + patch.height + margin} px height, grid has {height}")
    inset = patch_size // 5
    region_in = Rect(patch.row + inset, patch.col + inset, patch_size - 2 * inset, patch_size - 2 * inset)
    region_out = Rect(region_in.row, patch.col + patch_size + 2 * spacing, region_in.height, region_in.width)
    if not region_out.within(shape):
        raise GeometryError("no room for the out-of-feature reference region")
    contains = _union(_rect_fn(patch), *(g.contains for g in groups))
    return ObjectLayout(region_in, region_out, contains, [region_out], groups)


def _corner_regions(shape, side, offset):
    h, w = shape
    return [
        Rect(offset, offset, side, side),
        Rect(offset, w - offset - side, side, side),
        Rect(h - offset - side, offset, side, side),
    ]


def object_layout(spec: ObjectSpec) -> ObjectLayout:
    h, w = spec.shape
    if spec.kind == "usaf_target":
        if h < 64 or w < 64:
            raise GeometryError("usaf_target needs at least a 64x64 grid")
        return usaf_layout(w, h, spec.pixel_pitch)
    n = min(h, w)
    side = max(5, n // 8)
    # corner squares stay clear of a disk of radius 0.3*n, blur margin included
    offset = max(1, min(max(12, n // 25), int(0.2 * n) - side))
    center = (h / 2, w / 2)
    corners = _corner_regions((h, w), side, offset)
    if spec.kind == "uniform":
        inner = Rect(h // 2 - side // 2, w // 2 - side // 2, side, side)
        return ObjectLayout(inner, corners[0], lambda y, x: np.ones(np.broadcast(y, x).shape, bool),
                            corners)
    if spec.kind == "phase_disk":
        radius = 0.3 * n
        inner_side = max(5, int(radius))
        inner = Rect(int(center[0] - inner_side / 2), int(center[1] - inner_side / 2), inner_side, inner_side)
        return ObjectLayout(inner, corners[0], _disk_fn(center, radius), corners)
    # happy face: two disk eyes and a lower arc for the mouth
    eye_r = 0.07 * n
    eyes = _union(_disk_fn((0.36 * h, 0.33 * w), eye_r), _disk_fn((0.36 * h, 0.67 * w), eye_r))
    cy, cx = 0.45 * h, 0.5 * w

    def mouth(y, x):
        r = np.hypot(y - cy, x - cx)
        angle = np.arctan2(y - cy, x - cx)
        return (np.abs(r - 0.27 * n) <= 0.035 * n) & (angle > np.pi / 6) & (angle < 5 * np.pi / 6)

    # flat areas: forehead, left and right cheek
    flat = [
        Rect(int(0.08 * h), int(0.42 * w), side, side),
        Rect(int(0.52 * h), int(0.1 * w), side, side),
        Rect(int(0.52 * h), int(0.9 * w) - side, side, side),
    ]
    eye_side = max(5, int(eye_r))
    region_in = Rect(int(0.36 * h - eye_side / 2), int(0.33 * w - eye_side / 2), eye_side, eye_side)
    return ObjectLayout(region_in, flat[0], _union(eyes, mouth), flat)


def od_factor(od: float, convention: str = "amplitude") -> float:
    """Field transmission factor of an optical-density filter."""
    if not od >= 0:
        raise DomainError("od must be >= 0")
    if convention == "amplitude":
        return 10.0 ** (-od / 2)
    if convention == "intensity":
        return 10.0 ** (-od)
    raise DomainError(f"od convention must be one of {OD_CONVENTIONS}")


def make_object(spec: ObjectSpec) -> ComplexObject:
    """Render the object described by ``spec``.

    With ``supersample > 1`` edge pixels hold the pixel-averaged field of the
    partially covered area, so sub-pixel bar geometry survives sampling.
    """
    layout = object_layout(spec)
    cover = layout.coverage(spec.shape, spec.supersample)
    if spec.supersample == 1:
        phase = np.where(cover > 0.5, spec.phase_step, 0.0)
        transmission = np.ones(spec.shape)
    else:
        field_ = (1 - cover) + cover * np.exp(1j * spec.phase_step)
        phase = np.where(cover == 1, spec.phase_step, np.where(cover == 0, 0.0, np.angle(field_)))
        transmission = np.where((cover == 0) | (cover == 1), 1.0, np.abs(field_))
    transmission = transmission * float(spec.base_transmission)
    factor = od_factor(spec.od, spec.od_convention)
    if spec.od_region is None:
        transmission *= factor
    else:
        if not spec.od_region.within(spec.shape):
            raise GeometryError("od_region lies outside the grid")
        transmission[spec.od_region.slices] *= factor
    return ComplexObject(np.clip(transmission, 0.0, 1.0), phase, spec.pixel_pitch)


def phase_from_height(height, refractive_index=1.6, wavelength=IDLER_WAVELENGTH, passes=1):
    """Phase delay of an engraved step of ``height`` meters."""
    if not wavelength > 0:
        raise DomainError("wavelength must be > 0")
    if not refractive_index > 1:
        raise DomainError("refractive_index must be > 1")
    if passes < 1:
        raise DomainError("passes must be >= 1")
    return passes * 2 * np.pi * (refractive_index - 1) * np.asarray(height) / wavelength


def height_for_phase(phase, refractive_index=1.6, wavelength=IDLER_WAVELENGTH, passes=1):
    return phase * wavelength / (passes * 2 * np.pi * (refractive_index - 1))


def blur_object(obj: ComplexObject, psf_sigma: float) -> ComplexObject:
    """Gaussian blur of the complex field ``t*exp(i*theta)``; ``psf_sigma`` in meters."""
    if not psf_sigma >= 0:
        raise DomainError("psf_sigma must be >= 0")
    if psf_sigma == 0:
        return obj
    sigma_px = psf_sigma / obj.pixel_pitch
    field = obj.field
    blurred = (ndimage.gaussian_filter(field.real, sigma_px, mode="reflect", truncate=4.0)
               + 1j * ndimage.gaussian_filter(field.imag, sigma_px, mode="reflect", truncate=4.0))
    return ComplexObject.from_field(blurred, obj.pixel_pitch)


def frame_rng(seed, role, set_index, frame_index) -> np.random.Generator:
    """Independent generator for one frame, derived from the run seed."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(role), int(set_index), int(frame_index)))
    return np.random.default_rng(seq)


def _expose(expected, camera, rng):
    if expected.size and float(np.max(expected)) > MAX_COUNT:
        raise RangeError(
            f"expected counts up to {float(np.max(expected)):.0f} exceed the 16-bit range {MAX_COUNT}"
        )
    if camera.noiseless:
        return expected
    counts = rng.poisson(expected).astype(float) if camera.shot_noise else expected.copy()
    if camera.read_noise_sigma > 0:
        counts += rng.normal(0.0, camera.read_noise_sigma, size=counts.shape)
    # digitized output: whole counts, clamped to the sensor range
    return np.clip(np.rint(counts), 0, MAX_COUNT)


def simulate_stack(obj: ComplexObject, model: InterferometerModel, schedule: PhaseStepSchedule,
                   camera: CameraSpec, role=OBJECT_STREAM, set_index=0) -> FrameStack:
    """Simulate the camera frames for every global phase in ``schedule``.

    The object is blurred by ``model.psf_sigma`` first; each frame integrates
    the signal rate plus the camera dark rate over the exposure, then draws
    shot and read noise from its own seeded stream.
    """
    if not schedule.is_canonical:
        raise ScheduleError("simulate_stack needs a canonical schedule")
    blurred = blur_object(obj, model.psf_sigma)
    frames = []
    for m, dphi in enumerate(schedule.steps):
        rate = signal_rate(blurred, model, dphi) + camera.dark_background
        expected = rate * camera.exposure
        frames.append(_expose(expected, camera, frame_rng(camera.seed, role, set_index, m)))
    return FrameStack(schedule, np.stack(frames), camera.exposure)


def simulate_background(camera: CameraSpec, shape, set_index=0) -> np.ndarray:
    """Dark frame: a recording with the pump blocked."""
    expected = np.full(tuple(shape), camera.dark_background * camera.exposure)
    return _expose(expected, camera, frame_rng(camera.seed, BACKGROUND_STREAM, set_index, 0))


def interferometer_phase(shape, tilt=(0.0, 0.0), curvature=0.0) -> np.ndarray:
    """Smooth interferometer phase map: tilt in rad/px plus a centered quadratic bowl.

    ``curvature`` is the phase in radians reached at the grid corner.
    """
    h, w = shape
    rows, cols = np.indices(shape, dtype=float)
    y = rows - (h - 1) / 2
    x = cols - (w - 1) / 2
    bowl = 0.0
    r2max = ((h - 1) / 2) ** 2 + ((w - 1) / 2) ** 2
    if r2max > 0:
        bowl = curvature * (x**2 + y**2) / r2max
    return tilt[0] * y + tilt[1] * x + bowl


def regions_dict(layout: ObjectLayout) -> Dict[str, object]:
    return {
        "region_in": layout.region_in.as_tuple(),
        "region_out": layout.region_out.as_tuple(),
        "flat_regions": [r.as_tuple() for r in layout.flat_regions],
    }
