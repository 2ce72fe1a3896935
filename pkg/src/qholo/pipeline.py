"""Image-processing chain from raw frame stacks to a referenced hologram.

Order is fixed: background subtraction, FFT low-pass, Gaussian smoothing,
M-step reconstruction, unwrapping, reference subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage
from skimage.restoration import unwrap_phase as _skimage_unwrap

from .core import FrameStack, PhaseStepSchedule, Reconstruction, Rect, reconstruct_general
from .errors import DomainError, ScheduleError, ShapeError, SubsetError


@dataclass(frozen=True)
class FilterConfig:
    """Noise filters; ``lowpass_cutoff=None`` skips the FFT low-pass."""

    lowpass_cutoff: Optional[float] = 0.15  # cycles/px
    gaussian_sigma: float = 1.5  # px
    background: Optional[np.ndarray] = None
    border: int = 10  # width of the re-centering frame border, px

    def __post_init__(self):
        if self.lowpass_cutoff is not None and not 0 < self.lowpass_cutoff <= 0.5:
            raise DomainError(f"lowpass_cutoff must lie in (0, 0.5], got {self.lowpass_cutoff}")
        if not self.gaussian_sigma >= 0:
            raise DomainError("gaussian_sigma must be >= 0")
        if self.border < 1:
            raise DomainError("border must be >= 1 px")

    @classmethod
    def identity(cls, border=10):
        return cls(lowpass_cutoff=None, gaussian_sigma=0.0, border=border)


@dataclass(frozen=True)
class HologramResult:
    absolute_phase: np.ndarray
    transmission: np.ndarray
    reconstruction_object: Reconstruction
    reconstruction_reference: Reconstruction
    flagged_mask: np.ndarray  # reference modulation degenerate
    residues_object: int = 0
    residues_reference: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def shape(self):
        return self.absolute_phase.shape

    @property
    def degenerate_count(self) -> int:
        return int(np.count_nonzero(
            self.flagged_mask | self.reconstruction_object.degenerate_mask
        ))


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def subtract_background(frame, background):
    frame = np.asarray(frame, dtype=float)
    background = np.asarray(background, dtype=float)
    _same_shape(frame, background)
    return np.maximum(frame - background, 0.0)


def radial_frequency(shape):
    fy = np.fft.fftfreq(shape[0])
    fx = np.fft.fftfreq(shape[1])
    return np.hypot(fy[:, None], fx[None, :])


def lowpass_filter(frame, cutoff):
    """Zero every Fourier component above ``cutoff`` cycles/px (circular support)."""
    if not 0 < cutoff <= 0.5:
        raise DomainError(f"cutoff must lie in (0, 0.5], got {cutoff}")
    frame = np.asarray(frame, dtype=float)
    spectrum = np.fft.fft2(frame)
    spectrum[radial_frequency(frame.shape) > cutoff] = 0
    return np.fft.ifft2(spectrum).real


def gaussian_smooth(frame, sigma):
    """Normalized Gaussian kernel truncated at 4 sigma, mirror boundaries."""
    if not sigma >= 0:
        raise DomainError("sigma must be >= 0")
    frame = np.asarray(frame, dtype=float)
    if sigma == 0:
        return frame.copy()
    return ndimage.gaussian_filter(frame, sigma, mode="reflect", truncate=4.0)


def filter_frame(frame, filters: FilterConfig):
    out = np.asarray(frame, dtype=float)
    if filters.background is not None:
        out = subtract_background(out, filters.background)
    if filters.lowpass_cutoff is not None:
        out = lowpass_filter(out, filters.lowpass_cutoff)
    if filters.gaussian_sigma > 0:
        out = gaussian_smooth(out, filters.gaussian_sigma)
    return out


def filter_stack(stack: FrameStack, filters: FilterConfig) -> FrameStack:
    frames = np.stack([filter_frame(f, filters) for f in stack.frames])
    return stack.replace_frames(frames, filtered=True)


def subset_indices(m_base: int, m_target: int):
    if m_target < 3 or m_base % m_target:
        raise SubsetError(f"cannot take {m_target} equally spaced frames out of {m_base}")
    step = m_base // m_target
    return tuple(range(0, m_base, step))


def subset_frames(stack: FrameStack, m_target: int) -> FrameStack:
    """Equally spaced subset starting at frame 0 of a canonical base set."""
    if not stack.schedule.is_canonical:
        raise ScheduleError("subsetting needs a canonical base schedule")
    idx = subset_indices(stack.m, m_target)
    return FrameStack(PhaseStepSchedule.canonical(m_target), stack.frames[list(idx)],
                      stack.exposure, stack.filtered)


def count_residues(wrapped) -> int:
    """Number of 2x2 loops whose wrapped phase differences do not sum to zero."""
    w = np.asarray(wrapped, dtype=float)
    if min(w.shape) < 2:
        return 0

    def wd(d):
        return d - 2 * np.pi * np.round(d / (2 * np.pi))

    dx = wd(np.diff(w, axis=1))
    dy = wd(np.diff(w, axis=0))
    loop = dx[:-1, :] + dy[:, 1:] - dx[1:, :] - dy[:, :-1]
    return int(np.count_nonzero(np.abs(loop) > np.pi))


def _fill_masked(unwrapped, wrapped, mask):
    """Grow unwrapped values into masked pixels, one ring at a time."""
    out = unwrapped.copy()
    known = ~mask
    if not known.any():
        return wrapped.copy()
    kernel = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    while not known.all():
        vals = ndimage.convolve(np.where(known, out, 0.0), kernel, mode="constant")
        counts = ndimage.convolve(known.astype(float), kernel, mode="constant")
        front = (~known) & (counts > 0)
        guess = vals[front] / counts[front]
        w = wrapped[front]
        out[front] = w + 2 * np.pi * np.round((guess - w) / (2 * np.pi))
        known = known | front
    return out


def unwrap_phase(wrapped, mask=None):
    """Reliability-sorted 2D unwrapping; masked pixels are filled afterwards.

    The quality measure is the local second difference, edges are joined from
    most to least reliable. Masked pixels take the 2*pi branch closest to the
    mean of their already unwrapped neighbours.
    """
    wrapped = np.asarray(wrapped, dtype=float)
    if wrapped.ndim != 2:
        raise ShapeError("unwrap_phase expects a 2D map")
    if min(wrapped.shape) == 1:
        return np.unwrap(wrapped, axis=int(np.argmax(wrapped.shape)))
    if mask is None or not np.any(mask):
        return _skimage_unwrap(wrapped)
    mask = np.asarray(mask, dtype=bool)
    _same_shape(wrapped, mask)
    if mask.all():
        return wrapped.copy()
    partial = _skimage_unwrap(np.ma.array(wrapped, mask=mask))
    return _fill_masked(np.ma.getdata(partial).astype(float), wrapped, mask)


def border_mask(shape, width):
    mask = np.zeros(shape, dtype=bool)
    w = min(width, (min(shape) + 1) // 2)
    mask[:w, :] = mask[-w:, :] = True
    mask[:, :w] = mask[:, -w:] = True
    return mask


def reconstruct_stack(stack: FrameStack, filters: FilterConfig) -> Reconstruction:
    """Filter, reconstruct and unwrap a single stack."""
    rec = reconstruct_general(filter_stack(stack, filters))
    unwrapped = unwrap_phase(rec.wrapped_phase, rec.degenerate_mask)
    return Reconstruction(rec.wrapped_phase, rec.modulation, rec.mean_intensity,
                          rec.degenerate_mask, unwrapped, count_residues(rec.wrapped_phase))


def reconstruct_hologram(object_stack: FrameStack, reference_stack: FrameStack,
                         filters: FilterConfig = FilterConfig(),
                         background_region: Optional[np.ndarray] = None) -> HologramResult:
    """Referenced phase and transmission of an object.

    Both stacks go through the same chain; the unwrapped reference phase is
    subtracted from the object phase and the difference re-centered so that
    the median over ``background_region`` (default: the frame border of
    ``filters.border`` px) is zero. Transmission is the modulation ratio.
    """
    if object_stack.schedule != reference_stack.schedule:
        raise ScheduleError("object and reference stacks use different phase schedules")
    if object_stack.shape != reference_stack.shape:
        raise ShapeError(f"stack dimensions differ: {object_stack.shape} vs {reference_stack.shape}")
    rec_obj = reconstruct_stack(object_stack, filters)
    rec_ref = reconstruct_stack(reference_stack, filters)
    absolute = rec_obj.unwrapped_phase - rec_ref.unwrapped_phase
    if background_region is None:
        background_region = border_mask(absolute.shape, filters.border)
    usable = background_region & ~rec_obj.degenerate_mask & ~rec_ref.degenerate_mask
    if usable.any():
        absolute = absolute - np.median(absolute[usable])
    flagged = rec_ref.degenerate_mask | (rec_ref.modulation <= 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        transmission = np.where(flagged, 0.0, rec_obj.modulation / rec_ref.modulation)
    return HologramResult(absolute, transmission, rec_obj, rec_ref, flagged,
                          rec_obj.residues, rec_ref.residues)


def hologram_from_regions(result: HologramResult, region: Rect):
    return result.absolute_phase[region.slices], result.transmission[region.slices]
