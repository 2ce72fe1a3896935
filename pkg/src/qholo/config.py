"""Run configuration for the command-line tools.

A config is a nested mapping (JSON or YAML) with the sections below; every
section and key is optional and unknown keys are rejected. A manifest written
by a previous run is accepted as well, in which case its recorded config and
inputs are reused.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from .analysis import CALIBRATED_PSF_SIGMA, NOISE_VISIBILITY
from .core import InterferometerModel, Rect
from .errors import ConfigError, HoloError
from .forward import DEFAULT_PITCH, CameraSpec, ObjectSpec, interferometer_phase
from .pipeline import FilterConfig

SCHEDULE_MODES = ("subset", "direct")
BASE_M = 12


@dataclass
class ObjectSection:
    kind: str = "usaf_target"
    phase_step: float = 0.82 * np.pi
    base_transmission: float = 1.0
    od: float = 0.0
    od_region: Optional[List[int]] = None  # [row, col, height, width]
    od_convention: str = "amplitude"
    width: int = 500
    height: int = 500
    pixel_pitch: float = DEFAULT_PITCH
    supersample: int = 8


@dataclass
class InterferometerSection:
    visibility: float = NOISE_VISIBILITY
    mean_flux: float = 2000.0
    background_rate: float = 0.0
    psf_sigma: float = CALIBRATED_PSF_SIGMA
    tilt: List[float] = field(default_factory=lambda: [0.0, 0.0])  # rad/px (row, col)
    curvature: float = 0.0  # rad at the corner


@dataclass
class CameraSection:
    exposure: float = 0.5
    read_noise_sigma: float = 2.0
    dark_background: float = 0.0
    shot_noise: bool = True


@dataclass
class FilterSection:
    lowpass_cutoff: Optional[float] = 0.15
    gaussian_sigma: float = 1.5
    border: int = 10
    subtract_background: bool = True


@dataclass
class ScheduleSection:
    m: int = BASE_M
    mode: str = "subset"  # subset: record 12 frames, reduce later; direct: record m


@dataclass
class AnalysisSection:
    n_sets: int = 15
    exposures: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.5, 1.0])
    m_values: List[int] = field(default_factory=lambda: [3, 4, 6, 12])
    od_values: List[float] = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4])
    calibrate_psf: bool = False


SECTIONS = {
    "object": ObjectSection,
    "interferometer": InterferometerSection,
    "camera": CameraSection,
    "filters": FilterSection,
    "schedule": ScheduleSection,
    "analysis": AnalysisSection,
}


@dataclass
class RunConfig:
    seed: int = 0
    object: ObjectSection = field(default_factory=ObjectSection)
    interferometer: InterferometerSection = field(default_factory=InterferometerSection)
    camera: CameraSection = field(default_factory=CameraSection)
    filters: FilterSection = field(default_factory=FilterSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping", key="<root>")
        kwargs = {}
        for key, value in data.items():
            if key == "seed":
                kwargs["seed"] = _check_value("seed", value, int)
            elif key in SECTIONS:
                kwargs[key] = _section(SECTIONS[key], value, key)
            else:
                raise ConfigError(f"unknown config key {key!r}", key=key)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", key="seed")
        if self.schedule.mode not in SCHEDULE_MODES:
            raise ConfigError(f"schedule.mode must be one of {SCHEDULE_MODES}", key="schedule.mode")
        if self.schedule.m not in (3, 4, 6, 12):
            raise ConfigError("schedule.m must be 3, 4, 6 or 12", key="schedule.m")
        if len(self.interferometer.tilt) != 2:
            raise ConfigError("interferometer.tilt needs two entries", key="interferometer.tilt")
        if self.object.od_region is not None and len(self.object.od_region) != 4:
            raise ConfigError("object.od_region needs [row, col, height, width]", key="object.od_region")
        if self.analysis.n_sets < 1:
            raise ConfigError("analysis.n_sets must be >= 1", key="analysis.n_sets")
        if not set(self.analysis.m_values) <= {3, 4, 6, 12}:
            raise ConfigError("analysis.m_values must come from 3, 4, 6, 12", key="analysis.m_values")
        # building the library objects runs their own domain checks
        for name, build in (("object", self.object_spec), ("camera", self.camera_spec),
                            ("filters", self.filter_config), ("interferometer", self.model)):
            try:
                build()
            except HoloError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(str(exc), key=name) from exc

    # library objects
    def object_spec(self, **overrides) -> ObjectSpec:
        kw = asdict(self.object)
        if kw["od_region"] is not None:
            kw["od_region"] = Rect(*kw["od_region"])
        kw.update(overrides)
        return ObjectSpec(**kw)

    @property
    def shape(self):
        return (self.object.height, self.object.width)

    def model(self, **overrides) -> InterferometerModel:
        s = self.interferometer
        nu = interferometer_phase(self.shape, tuple(s.tilt), s.curvature)
        kw = dict(visibility=s.visibility, mean_flux=s.mean_flux,
                  background_rate=s.background_rate, psf_sigma=s.psf_sigma)
        kw.update(overrides)
        return InterferometerModel(nu, **kw)

    def camera_spec(self, **overrides) -> CameraSpec:
        kw = asdict(self.camera)
        kw["seed"] = self.seed
        kw.update(overrides)
        return CameraSpec(**kw)

    def filter_config(self, background=None) -> FilterConfig:
        f = self.filters
        return FilterConfig(lowpass_cutoff=f.lowpass_cutoff, gaussian_sigma=f.gaussian_sigma,
                            background=background if f.subtract_background else None, border=f.border)

    @property
    def record_m(self) -> int:
        """Number of frames recorded per stack."""
        return BASE_M if self.schedule.mode == "subset" else self.schedule.m

    def with_overrides(self, seed=None, m=None, exposure=None, no_noise=False):
        data = self.to_dict()
        if seed is not None:
            data["seed"] = seed
        if m is not None:
            data["schedule"]["m"] = m
        if exposure is not None:
            data["camera"]["exposure"] = exposure
        if no_noise:
            data["camera"]["shot_noise"] = False
            data["camera"]["read_noise_sigma"] = 0.0
        return RunConfig.from_dict(data)


def _check_value(key, value, kind, optional=False):
    if value is None and optional:
        return None
    ok = {
        int: isinstance(value, (int, np.integer)) and not isinstance(value, bool),
        float: isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool),
        bool: isinstance(value, bool),
        str: isinstance(value, str),
    }[kind]
    if not ok:
        raise ConfigError(f"{key} must be of type {kind.__name__}, got {value!r}", key=key)
    return float(value) if kind is float else int(value) if kind is int else value


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping", key=name)
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        full = f"{name}.{key}"
        if key not in known:
            raise ConfigError(f"unknown config key {full!r}", key=full)
        default = getattr(defaults, key)
        annotation = str(known[key].type)
        optional = annotation.startswith("Optional")
        if annotation.startswith(("List", "Optional[List")):
            if value is None and optional:
                kwargs[key] = None
                continue
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{full} must be a list", key=full)
            item = int if "int" in annotation else float
            kwargs[key] = [_check_value(full, v, item) for v in value]
        else:
            kind = type(default) if default is not None else float
            kwargs[key] = _check_value(full, value, kind, optional)
    return cls(**kwargs)


def load_document(path):
    """Parse a JSON or YAML file into a mapping."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", key="<file>") from exc
    except Exception as exc:  # yaml.YAMLError does not derive from ValueError
        if type(exc).__module__.startswith("yaml"):
            raise ConfigError(f"cannot parse {path}: {exc}", key="<file>") from exc
        raise
    return {} if data is None else data


def load_config(path=None):
    """``(RunConfig, manifest)``; ``manifest`` is None unless ``path`` is a manifest."""
    if path is None:
        return RunConfig(), None
    data = load_document(path)
    if isinstance(data, dict) and "command" in data and "config" in data:
        return RunConfig.from_dict(data["config"]), data
    return RunConfig.from_dict(data), None
