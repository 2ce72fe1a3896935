"""Phase-shifting holography with undetected photons: simulation and reconstruction."""

from .core import (
    ComplexObject,
    FrameStack,
    ImageGrid,
    InterferometerModel,
    PhaseStepSchedule,
    Reconstruction,
    Rect,
    classical_interference,
    reconstruct_four,
    reconstruct_general,
    signal_rate,
    wrap_phase,
)
from .forward import (
    BarGroupSpec,
    CameraSpec,
    ObjectSpec,
    blur_object,
    make_object,
    phase_from_height,
    simulate_background,
    simulate_stack,
)
from .pipeline import (
    FilterConfig,
    HologramResult,
    gaussian_smooth,
    lowpass_filter,
    reconstruct_hologram,
    subset_frames,
    subtract_background,
    unwrap_phase,
)

__version__ = "0.1.0"

__all__ = [
    "ComplexObject",
    "FrameStack",
    "ImageGrid",
    "InterferometerModel",
    "PhaseStepSchedule",
    "Reconstruction",
    "Rect",
    "classical_interference",
    "reconstruct_four",
    "reconstruct_general",
    "signal_rate",
    "wrap_phase",
    "BarGroupSpec",
    "CameraSpec",
    "ObjectSpec",
    "blur_object",
    "make_object",
    "phase_from_height",
    "simulate_background",
    "simulate_stack",
    "FilterConfig",
    "HologramResult",
    "gaussian_smooth",
    "lowpass_filter",
    "reconstruct_hologram",
    "subset_frames",
    "subtract_background",
    "unwrap_phase",
]
