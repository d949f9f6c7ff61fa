"""
geometry_types.py — Shared immutable types for the PAT engine.

Everything the other engine modules pass around lives here:
  - SensorGeometry   point sensors on a circle of radius R
  - ImageGrid        square lattice of bump centres
  - TimeGrid         equidistant samples in rescaled time (length units)
  - CoefficientImage the coefficient vector x of U*(x)
  - Sinogram         sensor-by-time data

plus the exception hierarchy raised by the numerical core.

Conventions:
  - lengths in mm, times rescaled by the sound speed (t ← c·t) once at
    ingestion, after which c = 1
  - image nodes are flattened row-major with the first axis along y
  - sinogram rows are sensors, columns are time samples
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

FULL_CIRCLE = 2.0 * math.pi
ANGLE_CONVENTIONS = ("per_sensor", "endpoints")

_ANGLE_TOL = 1e-12
_LENGTH_RTOL = 1e-9


# ── Errors ────────────────────────────────────────────────────────

class PatError(Exception):
    """Base class for failures of the numerical core."""


class GridMismatchError(PatError, ValueError):
    """Operands live on different grids or geometries."""


class TimeWindowError(PatError, ValueError):
    """Time window would truncate signals."""


class AliasingError(PatError, ValueError):
    """A filter band is not representable on the sampling grid."""


class StabilityError(PatError, ValueError):
    """Explicit scheme parameters violate a stability or domain bound."""


class DegenerateInputError(PatError, ValueError):
    """Zero operator, zero reference, rank-deficient basis and the like."""


# ══════════════════════════════════════════════════════════════════
# SENSOR GEOMETRY
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class SensorGeometry:
    """Point sensors at angles start_angle + m·h_θ on the circle of radius R.

    h_θ is coverage/M for the full circle and for the "per_sensor"
    convention; "endpoints" uses coverage/(M−1) so both arc ends carry a
    sensor. An explicit ``step`` (set by decimate_geometry) overrides both.
    """
    radius: float
    num_sensors: int
    coverage: float = FULL_CIRCLE
    start_angle: float = 0.0
    sound_speed: float = 1.0
    angle_convention: str = "per_sensor"
    step: Optional[float] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if int(self.num_sensors) != self.num_sensors or self.num_sensors < 1:
            raise ValueError(f"num_sensors must be a positive integer, got {self.num_sensors}")
        if not 0 < self.coverage <= FULL_CIRCLE + _ANGLE_TOL:
            raise ValueError(f"coverage must lie in (0, 2π], got {self.coverage}")
        if self.angle_convention not in ANGLE_CONVENTIONS:
            raise ValueError(
                f"angle_convention must be one of {ANGLE_CONVENTIONS}, got {self.angle_convention!r}"
            )
        if self.step is not None:
            if not self.step > 0:
                raise ValueError(f"step must be > 0, got {self.step}")
            if (self.num_sensors - 1) * self.step > FULL_CIRCLE + _ANGLE_TOL:
                raise ValueError("explicit step wraps the circle more than once")

    @property
    def is_full_circle(self) -> bool:
        return abs(self.coverage - FULL_CIRCLE) <= _ANGLE_TOL

    @property
    def angular_step(self) -> float:
        """h_θ in radians."""
        if self.step is not None:
            return self.step
        if self.is_full_circle or self.angle_convention == "per_sensor" or self.num_sensors == 1:
            return self.coverage / self.num_sensors
        return self.coverage / (self.num_sensors - 1)

    def angles(self) -> np.ndarray:
        return self.start_angle + np.arange(self.num_sensors) * self.angular_step

    def to_dict(self) -> dict:
        return {
            "radius": self.radius,
            "num_sensors": self.num_sensors,
            "coverage": self.coverage,
            "start_angle": self.start_angle,
            "sound_speed": self.sound_speed,
            "angle_convention": self.angle_convention,
            "step": self.step,
            "angular_step": self.angular_step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorGeometry":
        return cls(
            radius=d["radius"],
            num_sensors=d["num_sensors"],
            coverage=d["coverage"],
            start_angle=d["start_angle"],
            sound_speed=d["sound_speed"],
            angle_convention=d["angle_convention"],
            step=d.get("step"),
        )


def sensor_positions(geom: SensorGeometry) -> np.ndarray:
    """(M, 2) array of sensor coordinates; row m sits at angle start + m·h_θ."""
    ang = geom.angles()
    return geom.radius * np.column_stack([np.cos(ang), np.sin(ang)])


def rescale_time(geom: SensorGeometry, physical_times) -> np.ndarray:
    """Map physical times to lengths, t ← c·t.

    With c in mm/µs (1500 m/s = 1.5 mm/µs) and t in µs the result is in mm.
    """
    if not geom.sound_speed > 0:
        raise ValueError(f"sound speed must be > 0, got {geom.sound_speed}")
    return geom.sound_speed * np.asarray(physical_times, dtype=np.float64)


def decimate_geometry(geom: SensorGeometry, factor: int) -> SensorGeometry:
    """Keep sensors 0, n, 2n, ...; positions are an exact subset of geom's."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"subsample factor must be a positive integer, got {factor}")
    if factor == 1:
        return geom
    kept = len(range(0, geom.num_sensors, factor))
    return SensorGeometry(
        radius=geom.radius,
        num_sensors=kept,
        coverage=geom.coverage,
        start_angle=geom.start_angle,
        sound_speed=geom.sound_speed,
        angle_convention=geom.angle_convention,
        step=factor * geom.angular_step,
    )


# ══════════════════════════════════════════════════════════════════
# IMAGE AND TIME GRIDS
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class ImageGrid:
    """n×n lattice of bump centres with spacing h_x, symmetric about ``center``.

    support_radius is R0: only centres within R0 of ``center`` may carry
    nonzero coefficients. None means the whole square.
    """
    spacing: float
    samples_per_axis: int
    center: Tuple[float, float] = (0.0, 0.0)
    support_radius: Optional[float] = None

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError(f"spacing must be > 0, got {self.spacing}")
        if int(self.samples_per_axis) != self.samples_per_axis or self.samples_per_axis < 1:
            raise ValueError(f"samples_per_axis must be a positive integer, got {self.samples_per_axis}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.support_radius is not None and not self.support_radius > 0:
            raise ValueError(f"support_radius must be > 0, got {self.support_radius}")

    @property
    def num_nodes(self) -> int:
        return self.samples_per_axis * self.samples_per_axis

    @property
    def side(self) -> float:
        """Distance between the first and last node along an axis."""
        return (self.samples_per_axis - 1) * self.spacing

    @property
    def R0(self) -> float:
        if self.support_radius is not None:
            return self.support_radius
        return math.hypot(self.side / 2, self.side / 2)

    def axis(self) -> np.ndarray:
        """Node offsets along one axis, symmetric about zero."""
        n = self.samples_per_axis
        return (np.arange(n) - (n - 1) / 2.0) * self.spacing

    def node_coordinates(self) -> np.ndarray:
        """(n², 2) array of (x, y) node positions, row-major in y."""
        a = self.axis()
        yy, xx = np.meshgrid(a + self.center[1], a + self.center[0], indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def support_mask(self) -> np.ndarray:
        """Boolean (n²,) mask of nodes within R0 of the centre."""
        p = self.node_coordinates()
        r = np.hypot(p[:, 0] - self.center[0], p[:, 1] - self.center[1])
        return r <= self.R0 * (1.0 + _LENGTH_RTOL)

    def to_dict(self) -> dict:
        return {
            "spacing": self.spacing,
            "samples_per_axis": self.samples_per_axis,
            "center": list(self.center),
            "support_radius": self.support_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageGrid":
        return cls(
            spacing=d["spacing"],
            samples_per_axis=d["samples_per_axis"],
            center=tuple(d["center"]),
            support_radius=d.get("support_radius"),
        )


@dataclass(frozen=True)
class TimeGrid:
    """t_j = start + j·h_t for j = 0..N_t−1, in rescaled (length) units."""
    step: float
    num_samples: int
    start: float = 0.0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"time step must be > 0, got {self.step}")
        if int(self.num_samples) != self.num_samples or self.num_samples < 1:
            raise ValueError(f"num_samples must be a positive integer, got {self.num_samples}")
        if self.start < 0:
            raise ValueError(f"start time must be ≥ 0, got {self.start}")

    @classmethod
    def spanning(cls, step: float, end: float, start: float = 0.0) -> "TimeGrid":
        """Smallest grid with the given step whose window reaches ``end``."""
        n = int(math.ceil((end - start) / step - 1e-9)) + 1
        return cls(step=step, num_samples=max(n, 1), start=start)

    @property
    def end(self) -> float:
        return self.start + (self.num_samples - 1) * self.step

    def times(self) -> np.ndarray:
        return self.start + np.arange(self.num_samples) * self.step

    def covers(self, lo: float, hi: float) -> bool:
        tol = _LENGTH_RTOL * max(abs(hi), 1.0)
        return self.start <= lo + tol and self.end >= hi - tol

    def refine(self, factor: int) -> "TimeGrid":
        """Same window, step divided by factor; every original sample is kept."""
        if factor == 1:
            return self
        return TimeGrid(self.step / factor, (self.num_samples - 1) * factor + 1, self.start)

    def decimate(self, factor: int) -> "TimeGrid":
        """Every factor-th sample, starting at the first."""
        if factor == 1:
            return self
        return TimeGrid(self.step * factor, (self.num_samples - 1) // factor + 1, self.start)

    def to_dict(self) -> dict:
        return {"step": self.step, "num_samples": self.num_samples, "start": self.start}

    @classmethod
    def from_dict(cls, d: dict) -> "TimeGrid":
        return cls(step=d["step"], num_samples=d["num_samples"], start=d["start"])


def time_window_for(geom: SensorGeometry, igrid: ImageGrid) -> Tuple[float, float]:
    """[d_min − h_x, d_max + h_x] over sensor-to-node distances of the support.

    A bump centred at distance d is first heard at t = d − h_x; after
    d + h_x only the decaying 2D tail remains.
    """
    nodes = igrid.node_coordinates()[igrid.support_mask()]
    sensors = sensor_positions(geom)
    d_min, d_max = math.inf, 0.0
    for s in sensors:
        d = np.hypot(nodes[:, 0] - s[0], nodes[:, 1] - s[1])
        d_min = min(d_min, float(d.min()))
        d_max = max(d_max, float(d.max()))
    return max(d_min - igrid.spacing, 0.0), d_max + igrid.spacing


# ══════════════════════════════════════════════════════════════════
# DATA CONTAINERS
# ══════════════════════════════════════════════════════════════════

def _frozen_array(values, shape: Tuple[int, ...], what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.size != int(np.prod(shape)):
        raise GridMismatchError(f"{what} has {arr.size} entries, expected shape {shape}")
    arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CoefficientImage:
    """The coefficient vector x of f = U*(x) = Σ_k x_k u(· − k h_x)."""
    grid: ImageGrid
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients",
            _frozen_array(self.coefficients, (self.grid.num_nodes,), "coefficient vector"),
        )

    @classmethod
    def zeros(cls, grid: ImageGrid) -> "CoefficientImage":
        return cls(grid, np.zeros(grid.num_nodes))

    @classmethod
    def from_array(cls, grid: ImageGrid, arr) -> "CoefficientImage":
        return cls(grid, np.asarray(arr, dtype=np.float64).ravel())

    def as_array(self) -> np.ndarray:
        n = self.grid.samples_per_axis
        return self.coefficients.reshape(n, n)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def scaled(self, alpha: float) -> "CoefficientImage":
        return CoefficientImage(self.grid, alpha * self.coefficients)


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Sampled pressure traces; data[m, j] is sensor m at time t_j."""
    geometry: SensorGeometry
    time_grid: TimeGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = (self.geometry.num_sensors, self.time_grid.num_samples)
        object.__setattr__(self, "data", _frozen_array(self.data, shape, "sinogram"))

    @classmethod
    def zeros(cls, geometry: SensorGeometry, time_grid: TimeGrid) -> "Sinogram":
        return cls(geometry, time_grid, np.zeros((geometry.num_sensors, time_grid.num_samples)))

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def with_data(self, data) -> "Sinogram":
        return Sinogram(self.geometry, self.time_grid, data)


def check_same_grid(a: ImageGrid, b: ImageGrid, what: str = "image grid") -> None:
    if a != b:
        raise GridMismatchError(f"{what} mismatch: {a} vs {b}")
