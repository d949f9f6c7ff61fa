"""
raster_io.py — Self-describing raster and sinogram files, plus 16-bit PGM export.

File layout (both kinds):
  line 1   magic and format version, e.g. "PATRESOLVE-RASTER 1"
  line 2   one JSON object with sorted keys: dims, dtype, payload_bytes,
           grid or geometry/time grid, free-form meta, optional created
  payload  little-endian float32, row-major

Writing then reading returns the float32 payload bit for bit.
"""
from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

_engine_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "engine")
if _engine_dir not in sys.path:
    sys.path.insert(0, _engine_dir)

from geometry_types import CoefficientImage, ImageGrid, SensorGeometry, Sinogram, TimeGrid

log = logging.getLogger(__name__)

RASTER_MAGIC = "PATRESOLVE-RASTER"
SINOGRAM_MAGIC = "PATRESOLVE-SINOGRAM"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = "<f4"
PGM_MAX = 65535


class RasterFormatError(ValueError):
    """File is not a valid raster/sinogram file."""


# ── Shared framing ───────────────────────────────────────────────

def _write(path, magic: str, header: dict, payload: np.ndarray) -> None:
    body = np.ascontiguousarray(payload, dtype=PAYLOAD_DTYPE).tobytes()
    header = dict(header, dtype=PAYLOAD_DTYPE, payload_bytes=len(body))
    with open(path, "wb") as f:
        f.write(f"{magic} {FORMAT_VERSION}\n".encode("ascii"))
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(body)
    log.info("wrote %s (%d payload bytes)", path, len(body))


def _read(path, magic: str) -> Tuple[dict, np.ndarray]:
    with open(path, "rb") as f:
        first = f.readline().decode("ascii", errors="replace").rstrip("\n")
        second = f.readline()
        body = f.read()
    parts = first.split(" ")
    if len(parts) != 2 or parts[0] != magic:
        raise RasterFormatError(f"{path}: expected magic {magic!r}, found {first[:40]!r}")
    if parts[1] != str(FORMAT_VERSION):
        raise RasterFormatError(f"{path}: unsupported format version {parts[1]!r}")
    try:
        header = json.loads(second.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise RasterFormatError(f"{path}: malformed header: {e}") from e
    if header.get("dtype") != PAYLOAD_DTYPE:
        raise RasterFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    dims = tuple(header.get("dims", ()))
    expected = 4 * int(np.prod(dims)) if dims else -1
    if len(body) != header.get("payload_bytes") or len(body) != expected:
        raise RasterFormatError(f"{path}: payload has {len(body)} bytes, header promises {expected}")
    return header, np.frombuffer(body, dtype=PAYLOAD_DTYPE).reshape(dims)


# ══════════════════════════════════════════════════════════════════
# RASTER
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class RasterFile:
    """Coefficient image on an ImageGrid; data is (n, n) float32, rows along y."""
    grid: ImageGrid
    data: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_image(cls, x: CoefficientImage, meta: Optional[dict] = None) -> "RasterFile":
        return cls(x.grid, x.as_array().astype(PAYLOAD_DTYPE), dict(meta or {}))

    def to_image(self) -> CoefficientImage:
        return CoefficientImage.from_array(self.grid, self.data.astype(np.float64))

    def write(self, path, created: Optional[str] = None) -> Path:
        n = self.grid.samples_per_axis
        header = {"kind": "raster", "dims": [n, n], "spacing": self.grid.spacing,
                  "grid": self.grid.to_dict(), "meta": self.meta}
        if created:
            header["created"] = created
        _write(path, RASTER_MAGIC, header, self.data)
        return Path(path)

    @classmethod
    def read(cls, path) -> "RasterFile":
        header, data = _read(path, RASTER_MAGIC)
        try:
            grid = ImageGrid.from_dict(header["grid"])
        except (KeyError, TypeError, ValueError) as e:
            raise RasterFormatError(f"{path}: bad grid description: {e}") from e
        if data.shape != (grid.samples_per_axis, grid.samples_per_axis):
            raise RasterFormatError(f"{path}: dims {data.shape} disagree with the grid")
        return cls(grid, data, header.get("meta", {}))


# ══════════════════════════════════════════════════════════════════
# SINOGRAM
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class SinogramFile:
    """Sensor-by-time data; data is (M, N_t) float32."""
    geometry: SensorGeometry
    time_grid: TimeGrid
    data: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_sinogram(cls, g: Sinogram, meta: Optional[dict] = None) -> "SinogramFile":
        return cls(g.geometry, g.time_grid, g.data.astype(PAYLOAD_DTYPE), dict(meta or {}))

    def to_sinogram(self) -> Sinogram:
        return Sinogram(self.geometry, self.time_grid, self.data.astype(np.float64))

    def write(self, path, created: Optional[str] = None) -> Path:
        header = {
            "kind": "sinogram",
            "dims": [self.geometry.num_sensors, self.time_grid.num_samples],
            "geometry": self.geometry.to_dict(),
            "time_grid": self.time_grid.to_dict(),
            "effective_h_theta": self.geometry.angular_step,
            "meta": self.meta,
        }
        if created:
            header["created"] = created
        _write(path, SINOGRAM_MAGIC, header, self.data)
        return Path(path)

    @classmethod
    def read(cls, path) -> "SinogramFile":
        header, data = _read(path, SINOGRAM_MAGIC)
        try:
            geom = SensorGeometry.from_dict(header["geometry"])
            tgrid = TimeGrid.from_dict(header["time_grid"])
        except (KeyError, TypeError, ValueError) as e:
            raise RasterFormatError(f"{path}: bad geometry/time grid description: {e}") from e
        if data.shape != (geom.num_sensors, tgrid.num_samples):
            raise RasterFormatError(f"{path}: dims {data.shape} disagree with geometry and time grid")
        return cls(geom, tgrid, data, header.get("meta", {}))


# ══════════════════════════════════════════════════════════════════
# PGM
# ══════════════════════════════════════════════════════════════════

def write_pgm(path, image: np.ndarray, window: Optional[Tuple[float, float]] = None) -> Tuple[float, float]:
    """Binary 16-bit PGM, top row = largest y; the window goes into a header comment."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = window if window is not None else (float(img.min()), float(img.max()))
    if hi > lo:
        scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.zeros_like(img)
    pixels = np.rint(np.flipud(scaled) * PGM_MAX).astype(">u2")
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n# window {lo!r} {hi!r}\n{w} {h}\n{PGM_MAX}\n".encode("ascii"))
        f.write(pixels.tobytes())
    return lo, hi


def read_pgm(path) -> Tuple[np.ndarray, Tuple[float, float]]:
    """Inverse of write_pgm for files it produced: (pixels with row 0 = smallest y, window)."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise RasterFormatError(f"{path}: not a binary PGM")
        comment = f.readline().decode("ascii").split()
        if comment[:2] != ["#", "window"]:
            raise RasterFormatError(f"{path}: missing window comment")
        w, h = (int(v) for v in f.readline().split())
        if int(f.readline()) != PGM_MAX:
            raise RasterFormatError(f"{path}: expected 16-bit maxval")
        pixels = np.frombuffer(f.read(), dtype=">u2").reshape(h, w)
    return np.flipud(pixels), (float(comment[2]), float(comment[3]))
