"""Domain types and closed-form phase-shifting holography.

Rasters are plain 2D ``numpy`` arrays (row-major, ``[row, col]``). ``ImageGrid``
wraps one with a unit tag where the unit matters, i.e. at file boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, ScheduleError, ShapeError

UNITS = ("photons", "radians", "dimensionless")

# relative to M * global mean frame value
DEGENERACY_RATIO = 1e-12
OVERMODULATION_FLAG = 1.5


@dataclass(frozen=True)
class Rect:
    """Pixel rectangle ``[row, row+height) x [col, col+width)``."""

    row: int
    col: int
    height: int
    width: int

    @property
    def slices(self):
        return (slice(self.row, self.row + self.height), slice(self.col, self.col + self.width))

    @property
    def area(self) -> int:
        return self.height * self.width

    def within(self, shape) -> bool:
        return (self.row >= 0 and self.col >= 0 and self.height > 0 and self.width > 0
                and self.row + self.height <= shape[0] and self.col + self.width <= shape[1])

    def overlaps(self, other: "Rect") -> bool:
        return not (self.row + self.height <= other.row or other.row + other.height <= self.row
                    or self.col + self.width <= other.col or other.col + other.width <= self.col)

    def as_tuple(self):
        return (self.row, self.col, self.height, self.width)


def _frozen(a, dtype=float):
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_same_shape(*arrays, names=None):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        label = ", ".join(names) if names else "inputs"
        raise ShapeError(f"{label} must share dimensions, got {sorted(shapes)}")


def wrap_phase(phase):
    """Wrap to the half-open interval (-pi, pi]."""
    out = np.angle(np.exp(1j * np.asarray(phase, dtype=float)))
    return np.where(out <= -np.pi, out + 2 * np.pi, out)


@dataclass(frozen=True)
class ImageGrid:
    """A finite 2D raster with a unit tag."""

    values: np.ndarray
    unit: str = "dimensionless"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ShapeError(f"ImageGrid needs a non-empty 2D array, got shape {values.shape}")
        if self.unit not in UNITS:
            raise DomainError(f"unknown unit {self.unit!r}; expected one of {UNITS}")
        if not np.all(np.isfinite(values)):
            raise DomainError("ImageGrid values must be finite")
        if self.unit == "photons" and np.any(values < 0):
            raise DomainError("photon grids cannot hold negative values")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class ComplexObject:
    """Object transmission ``t * exp(i*theta)`` sampled on a grid.

    ``pixel_pitch`` is the object-plane sampling in meters.
    """

    transmission: np.ndarray
    phase: np.ndarray
    pixel_pitch: float = 12.2e-6

    def __post_init__(self):
        t = np.asarray(self.transmission, dtype=float)
        theta = np.asarray(self.phase, dtype=float)
        if t.ndim != 2:
            raise ShapeError("transmission must be 2D")
        _check_same_shape(t, theta, names=("transmission", "phase"))
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(theta))):
            raise DomainError("object maps must be finite")
        if np.any(t < 0) or np.any(t > 1):
            raise DomainError("transmission must lie in [0, 1]")
        if not self.pixel_pitch > 0:
            raise DomainError("pixel_pitch must be positive")
        object.__setattr__(self, "transmission", _frozen(t))
        object.__setattr__(self, "phase", _frozen(theta))

    @property
    def shape(self):
        return self.transmission.shape

    @property
    def field(self) -> np.ndarray:
        return self.transmission * np.exp(1j * self.phase)

    @classmethod
    def from_field(cls, field, pixel_pitch):
        t = np.clip(np.abs(field), 0.0, 1.0)
        return cls(t, np.angle(field), pixel_pitch)

    @classmethod
    def empty(cls, shape, pixel_pitch=12.2e-6):
        """Object-free path: unit transmission, zero phase."""
        return cls(np.ones(shape), np.zeros(shape), pixel_pitch)


@dataclass(frozen=True)
class InterferometerModel:
    nu: np.ndarray
    visibility: float = 1.0
    mean_flux: float = 2000.0
    background_rate: float = 0.0
    psf_sigma: float = 0.0

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        if nu.ndim != 2:
            raise ShapeError("nu must be 2D")
        if not np.all(np.isfinite(nu)):
            raise DomainError("nu must be finite")
        if not 0.0 <= self.visibility <= 1.0:
            raise DomainError(f"visibility {self.visibility} outside [0, 1]")
        for name in ("mean_flux", "background_rate", "psf_sigma"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be >= 0")
        object.__setattr__(self, "nu", _frozen(nu))

    @classmethod
    def flat(cls, shape, **kwargs):
        return cls(np.zeros(shape), **kwargs)


@dataclass(frozen=True)
class PhaseStepSchedule:
    steps: tuple

    def __post_init__(self):
        steps = tuple(float(s) for s in self.steps)
        if len(steps) < 3:
            raise ScheduleError(f"need at least 3 phase steps, got {len(steps)}")
        if not all(np.isfinite(steps)):
            raise ScheduleError("phase steps must be finite")
        object.__setattr__(self, "steps", steps)

    @classmethod
    def canonical(cls, m: int) -> "PhaseStepSchedule":
        if m < 3:
            raise ScheduleError(f"need M >= 3, got {m}")
        return cls(tuple(2 * np.pi * k / m for k in range(m)))

    def __len__(self):
        return len(self.steps)

    @property
    def m(self) -> int:
        return len(self.steps)

    @property
    def is_canonical(self) -> bool:
        expected = 2 * np.pi * np.arange(self.m) / self.m
        return bool(np.allclose(self.steps, expected, rtol=0, atol=1e-12))

    def weights(self):
        """Exact-zero-snapped ``(sin, cos)`` weights of the steps."""
        s = np.sin(self.steps)
        c = np.cos(self.steps)
        for w in (s, c):
            w[np.abs(w) < 1e-12] = 0.0
            unit = np.abs(np.abs(w) - 1) < 1e-12
            w[unit] = np.sign(w[unit])
        return s, c


@dataclass(frozen=True)
class FrameStack:
    """``M`` photon-count frames, shape ``(M, H, W)``, one per schedule step."""

    schedule: PhaseStepSchedule
    frames: np.ndarray
    exposure: float
    filtered: bool = False  # filtered frames may ring slightly below zero

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 3:
            raise ShapeError(f"frames must be a (M, H, W) array, got shape {frames.shape}")
        if frames.shape[0] != len(self.schedule):
            raise ScheduleError(
                f"{frames.shape[0]} frames for a {len(self.schedule)}-step schedule"
            )
        if not self.exposure > 0:
            raise DomainError("exposure must be > 0")
        if not np.all(np.isfinite(frames)):
            raise DomainError("frames must be finite")
        if not self.filtered and np.any(frames < 0):
            raise DomainError("photon-count frames must be >= 0")
        object.__setattr__(self, "frames", _frozen(frames))

    @property
    def m(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]

    def replace_frames(self, frames, filtered=None) -> "FrameStack":
        filtered = self.filtered if filtered is None else filtered
        return FrameStack(self.schedule, frames, self.exposure, filtered)


@dataclass(frozen=True)
class Reconstruction:
    wrapped_phase: np.ndarray
    modulation: np.ndarray
    mean_intensity: np.ndarray
    degenerate_mask: np.ndarray
    unwrapped_phase: Optional[np.ndarray] = None
    residues: int = field(default=0, compare=False)

    def __post_init__(self):
        maps = [self.wrapped_phase, self.modulation, self.mean_intensity, self.degenerate_mask]
        if self.unwrapped_phase is not None:
            maps.append(self.unwrapped_phase)
        _check_same_shape(*maps)

    @property
    def overmodulated_mask(self) -> np.ndarray:
        """Pixels whose modulation exceeds 1.5, a noise symptom."""
        return self.modulation > OVERMODULATION_FLAG


def classical_interference(i_ref, i_obj, theta_ref, theta_obj):
    """Two-beam interference pattern of a reference and an object beam."""
    i_ref, i_obj = np.asarray(i_ref, dtype=float), np.asarray(i_obj, dtype=float)
    theta_ref, theta_obj = np.asarray(theta_ref, dtype=float), np.asarray(theta_obj, dtype=float)
    _check_same_shape(i_ref, i_obj, theta_ref, theta_obj,
                      names=("i_ref", "i_obj", "theta_ref", "theta_obj"))
    if np.any(i_ref < 0) or np.any(i_obj < 0):
        raise DomainError("intensities must be >= 0")
    out = i_ref + i_obj + 2 * np.sqrt(i_ref * i_obj) * np.cos(theta_obj - theta_ref)
    # rounding can leave -1e-16 at full destructive interference
    return np.maximum(out, 0.0)


def signal_rate(obj: ComplexObject, model: InterferometerModel, dphi: float) -> np.ndarray:
    """Expected signal-photon rate per pixel per second at global phase ``dphi``.

    The undetected-light fringe ``1 + V*t*cos(theta - nu + dphi)`` scaled by the
    mean flux, plus an incoherent background.
    """
    _check_same_shape(obj.transmission, model.nu, names=("object", "interferometer nu"))
    if not np.isfinite(dphi):
        raise DomainError("dphi must be finite")
    fringe = 1.0 + model.visibility * obj.transmission * np.cos(obj.phase - model.nu + dphi)
    return model.mean_flux * fringe + model.background_rate


def _degenerate(total, frames):
    m = frames.shape[0]
    threshold = DEGENERACY_RATIO * m * float(np.mean(frames))
    return (total < threshold) | (total <= 0)


def _finish(num_s, num_c, total, frames):
    """Phase/modulation from the quadrature sums; shared by both estimators."""
    degenerate = _degenerate(total, frames)
    with np.errstate(divide="ignore", invalid="ignore"):
        modulation = 2 * np.sqrt(num_s**2 + num_c**2) / total
    phase = np.arctan2(num_s, num_c)
    phase = np.where(phase <= -np.pi, phase + 2 * np.pi, phase)
    phase = np.where(degenerate, 0.0, phase)
    modulation = np.where(degenerate, 0.0, modulation)
    return Reconstruction(
        wrapped_phase=phase,
        modulation=modulation,
        mean_intensity=total / frames.shape[0],
        degenerate_mask=degenerate,
    )


def reconstruct_four(stack: FrameStack) -> Reconstruction:
    """Four-bucket phase and modulation for steps (0, pi/2, pi, 3pi/2)."""
    if stack.m != 4 or not stack.schedule.is_canonical:
        raise ScheduleError("reconstruct_four needs the canonical schedule (0, pi/2, pi, 3pi/2)")
    n0, n1, n2, n3 = stack.frames
    total = n0 + n1 + n2 + n3
    return _finish(n3 - n1, n0 - n2, total, stack.frames)


def reconstruct_general(stack: FrameStack) -> Reconstruction:
    """Least-squares M-step phase and modulation for equally spaced steps.

    With ``S = sum N_m sin(dphi_m)``, ``C = sum N_m cos(dphi_m)`` and
    ``D = sum N_m`` the phase is ``atan2(-S, C)`` and the modulation
    ``2*sqrt(S**2 + C**2)/D``.
    """
    if stack.m < 3:
        raise ScheduleError(f"need M >= 3, got {stack.m}")
    if not stack.schedule.is_canonical:
        raise ScheduleError("reconstruction needs a canonical schedule 2*pi*m/M")
    sin_w, cos_w = stack.schedule.weights()
    frames = stack.frames
    s = np.zeros(stack.shape)
    c = np.zeros(stack.shape)
    total = np.zeros(stack.shape)
    # accumulate in frame order so M=4 matches reconstruct_four bit for bit
    for frame, ws, wc in zip(frames, sin_w, cos_w):
        s += ws * frame
        c += wc * frame
        total += frame
    return _finish(-s, c, total, frames)


def reconstruct(stack: FrameStack) -> Reconstruction:
    return reconstruct_general(stack)
