"""On-disk formats for frames, maps, stacks and reports.

Photon-count frames are binary 16-bit PGM files (big-endian, maxval 65535)
with a ``.txt`` sidecar holding scale, exposure, phase step and seed. Frames
that are not whole counts (noiseless simulations) and all maps are raw
little-endian float rasters with a text header giving dtype, size and unit.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .core import FrameStack, ImageGrid, PhaseStepSchedule
from .errors import DomainError, ScheduleError

PGM_MAXVAL = 65535
RASTER_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _write_header(path, items):
    lines = [f"{k}: {v}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_header(path):
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition(":")
            out[key.strip()] = value.strip()
    return out


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".txt")


def is_count_frame(values) -> bool:
    values = np.asarray(values)
    return bool(np.all(values >= 0) and np.all(values <= PGM_MAXVAL) and np.all(values == np.rint(values)))


def write_pgm16(path, values):
    values = np.asarray(values)
    if not is_count_frame(values):
        raise DomainError("PGM frames hold whole counts in [0, 65535]")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(values.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    # magic, width, height, maxval, then exactly one whitespace byte
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5":
        raise DomainError(f"{path}: not a binary PGM file")
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(float)


def write_raster(path, values, unit="dimensionless", dtype="float32"):
    """Raw little-endian float raster plus ``<path>.txt`` header."""
    grid = values if isinstance(values, ImageGrid) else ImageGrid(values, unit)
    raw = grid.values.astype(RASTER_DTYPES[dtype])
    Path(path).write_bytes(raw.tobytes())
    _write_header(sidecar(path), {
        "format": f"{dtype}-le", "width": grid.width, "height": grid.height, "unit": grid.unit,
    })


def read_raster(path) -> ImageGrid:
    header = _read_header(sidecar(path))
    dtype = header["format"].removesuffix("-le")
    if dtype not in RASTER_DTYPES:
        raise DomainError(f"{path}: unsupported raster format {header['format']!r}")
    w, h = int(header["width"]), int(header["height"])
    raw = Path(path).read_bytes()
    expected = w * h * np.dtype(RASTER_DTYPES[dtype]).itemsize
    if len(raw) != expected:
        raise DomainError(f"{path}: {len(raw)} bytes, header implies {expected}")
    values = np.frombuffer(raw, dtype=RASTER_DTYPES[dtype])
    return ImageGrid(values.reshape(h, w).astype(float), header.get("unit", "dimensionless"))


def write_frame(path_stem, values, exposure, phase_step=0.0, seed=0) -> Path:
    """Write one frame; whole counts go to PGM, anything else to a float64 raster."""
    path_stem = Path(path_stem)
    if is_count_frame(values):
        path = path_stem.with_suffix(".pgm")
        write_pgm16(path, values)
        _write_header(sidecar(path), {
            "format": "pgm16", "scale": repr(1.0), "exposure": repr(float(exposure)),
            "phase_step": repr(float(phase_step)), "seed": int(seed), "unit": "photons",
        })
    else:
        path = path_stem.with_suffix(".f64")
        write_raster(path, ImageGrid(values, "photons"), "photons", dtype="float64")
        header = _read_header(sidecar(path))
        header.update({"exposure": repr(float(exposure)), "phase_step": repr(float(phase_step)),
                       "seed": int(seed)})
        _write_header(sidecar(path), header)
    return path


def read_frame(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".pgm":
        header = _read_header(sidecar(path))
        return read_pgm16(path) * float(header.get("scale", 1.0))
    return read_raster(path).values


def write_stack(directory, stack: FrameStack, seed=0):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for m, (frame, step) in enumerate(zip(stack.frames, stack.schedule.steps)):
        names.append(write_frame(directory / f"frame_{m:02d}", frame, stack.exposure, step, seed).name)
    _write_header(directory / "stack.txt", {
        "m": stack.m,
        "exposure": repr(float(stack.exposure)),
        "phase_steps": " ".join(repr(float(s)) for s in stack.schedule.steps),
        "frames": " ".join(names),
        "seed": int(seed),
    })
    return names


def read_stack(directory) -> FrameStack:
    directory = Path(directory)
    index = directory / "stack.txt"
    if not index.exists():
        raise FileNotFoundError(f"no frame stack at {directory} (missing {index.name})")
    header = _read_header(index)
    steps = tuple(float(s) for s in header["phase_steps"].split())
    names = header["frames"].split()
    if len(names) != len(steps):
        raise ScheduleError(f"{index}: {len(names)} frames for {len(steps)} phase steps")
    frames = np.stack([read_frame(directory / n) for n in names])
    return FrameStack(PhaseStepSchedule(steps), frames, float(header["exposure"]))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tree_digests(directory, exclude=("manifest.json", "timing.txt")):
    """sha256 of every file below ``directory``, keyed by relative path."""
    directory = Path(directory)
    out = {}
    for root, _, files in os.walk(directory):
        for name in sorted(files):
            p = Path(root) / name
            rel = p.relative_to(directory).as_posix()
            if rel not in exclude:
                out[rel] = file_digest(p)
    return dict(sorted(out.items()))


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n",
                          encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return obj.as_posix()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report(path, title, params=None, columns=None, rows=None):
    """Key-value section followed by an optional tab-separated table section."""
    lines = [f"# qholo report: {title}", "", "[parameters]"]
    for key, value in (params or {}).items():
        lines.append(f"{key} = {_fmt(value)}")
    if columns is not None:
        lines += ["", "[table]", "\t".join(columns)]
        for row in rows or []:
            lines.append("\t".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path):
    """Inverse of ``write_report``: ``(params, columns, rows)`` as strings."""
    params, columns, rows = {}, None, []
    section = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            continue
        if section == "parameters":
            key, _, value = line.partition(" = ")
            params[key] = value
        elif section == "table":
            if columns is None:
                columns = line.split("\t")
            else:
                rows.append(line.split("\t"))
    return params, columns, rows
