"""
config.py — Experiment configuration for pat-resolve.

One file fully determines an experiment. The shipped default
(configs/default.json) reproduces the reference setup: 64 sensors on a
40 mm circle over 289°, a 40 mm × 40 mm field of 192² samples, 50 µs of
data at 1.5 mm/µs, a Gaussian detector response at 15 rad/mm.

Loading:
  ExperimentConfig.from_file(path)   YAML or JSON (JSON is a YAML subset)
  ExperimentConfig.from_env()        PATRESOLVE_CONFIG / PATRESOLVE_OUT /
                                     PATRESOLVE_WORKERS, .env honoured

Schema errors and cross-reference errors both surface as ConfigError with
the dotted key path of the offending entry.
"""
from __future__ import annotations

import logging
import math
import os
import sys
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

_engine_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "engine")
if _engine_dir not in sys.path:
    sys.path.insert(0, _engine_dir)

from bandlimit_filter import FilterSpec, check_representable
from geometry_types import AliasingError, ImageGrid, SensorGeometry, TimeGrid, decimate_geometry, time_window_for
from phantom import BumpBasis, GridPhantomSpec
from recon import L1PosConfig, TikhonovConfig

log = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / "configs" / "default.json"
METHODS = ("tikhonov", "l1pos")


class ConfigError(Exception):
    """Invalid or inconsistent configuration; ``key_path`` names the entry."""

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path
        self.message = message


# ══════════════════════════════════════════════════════════════════
# SECTIONS
# ══════════════════════════════════════════════════════════════════

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometrySection(_Section):
    radius: float = Field(40.0, gt=0, description="sensor circle radius [mm]")
    num_sensors: int = Field(64, ge=1)
    coverage_deg: float = Field(289.0, gt=0, le=360)
    start_angle_deg: float = 0.0
    sound_speed: float = Field(1.5, gt=0, description="[mm/µs]")
    angle_convention: Literal["per_sensor", "endpoints"] = "per_sensor"


class ImageGridSection(_Section):
    side: float = Field(40.0, gt=0, description="distance between first and last node [mm]")
    samples_per_axis: int = Field(192, ge=2)
    center: Tuple[float, float] = (0.0, 0.0)
    support_radius: Optional[float] = Field(None, gt=0)


class TimeGridSection(_Section):
    duration_us: float = Field(50.0, gt=0)
    start_us: float = Field(0.0, ge=0)
    step: Optional[float] = Field(None, gt=0, description="h_t [mm]; defaults to h_x")
    oversampling: int = Field(4, ge=1, description="refinement used for simulation and filtering")


class FilterSection(_Section):
    bandwidth: float = Field(15.0, gt=0, description="Ω [rad/mm]")
    kind: Literal["gaussian", "ideal"] = "gaussian"
    attenuation: float = Field(0.01, gt=0, lt=1)


class PhantomSection(_Section):
    kind: Literal["grid", "disc", "random"] = "grid"
    pitch: float = Field(10.0 / 9.0, gt=0)
    bar_width: Optional[float] = Field(None, gt=0, description="defaults to pitch/2")
    extent: float = Field(20.0, gt=0)
    amplitude: float = 1.0
    orientation_deg: float = 0.0
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = Field(5.0, gt=0, description="disc phantom radius [mm]")
    bandwidth: Optional[float] = Field(None, gt=0, description="random phantom band; defaults to filter.bandwidth")


class ForwardSection(_Section):
    basis_exponent: int = Field(2, ge=1)
    radial_oversampling: int = Field(8, ge=1)
    normalization: float = Field(1.0, gt=0)
    workers: int = Field(1, ge=1)


class TikhonovSection(_Section):
    lam: float = Field(1e-3, ge=0)
    max_iters: int = Field(200, ge=1)
    normal_residual_tol: float = Field(1e-6, gt=0)


class L1PosSection(_Section):
    mu: float = Field(1e-4, ge=0)
    max_iters: int = Field(500, ge=1)
    step_size: Optional[float] = Field(None, gt=0)
    objective_tol: float = Field(1e-6, gt=0)
    restart: bool = True
    norm_iters: int = Field(30, ge=10)


class MethodsSection(_Section):
    run: List[str] = Field(default_factory=lambda: list(METHODS))
    tikhonov: TikhonovSection = TikhonovSection()
    l1pos: L1PosSection = L1PosSection()

    @field_validator("run")
    @classmethod
    def _known(cls, names: List[str]) -> List[str]:
        unknown = [n for n in names if n not in METHODS]
        if unknown:
            raise ValueError(f"unknown method(s) {unknown}; available: {', '.join(METHODS)}")
        return names


class MetricsSection(_Section):
    threshold: float = Field(0.2, gt=0, lt=1)
    samples_per_pitch: int = Field(32, ge=4)


class ProbeSection(_Section):
    samples_per_axis: int = Field(24, ge=4, description="grid size of the downscaled probe copy")
    num_probes: int = Field(256, ge=10)
    power_iters: int = Field(2, ge=0)
    sweep_factors: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])

    @field_validator("sweep_factors")
    @classmethod
    def _positive(cls, factors: List[float]) -> List[float]:
        if not factors or any(f <= 0 for f in factors):
            raise ValueError("sweep factors must be a non-empty list of positive numbers")
        return factors


# ══════════════════════════════════════════════════════════════════
# EXPERIMENT CONFIG
# ══════════════════════════════════════════════════════════════════

class ExperimentConfig(_Section):
    geometry: GeometrySection = GeometrySection()
    image_grid: ImageGridSection = ImageGridSection()
    time_grid: TimeGridSection = TimeGridSection()
    filter: FilterSection = FilterSection()
    phantom: PhantomSection = PhantomSection()
    forward: ForwardSection = ForwardSection()
    methods: MethodsSection = MethodsSection()
    metrics: MetricsSection = MetricsSection()
    sampling: ProbeSection = ProbeSection()
    subsample: int = Field(1, ge=1, description="keep every n-th sensor of the simulated array")
    output_dir: str = "out"
    seed: int = 0
    write_timestamp: bool = False

    # ── Loading ────────────────────────────────────────────────────

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("", "configuration must be a mapping at the top level")
        try:
            cfg = cls.model_validate(data)
        except ValidationError as e:
            err = e.errors()[0]
            raise ConfigError(".".join(str(p) for p in err["loc"]), err["msg"]) from e
        cfg.check_consistency()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Load YAML or JSON; OSError propagates to the caller."""
        with open(path) as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigError("", f"cannot parse {path}: {e}") from e
        log.info("config loaded from %s", path)
        return cls.from_dict(data)

    @classmethod
    def from_env(cls) -> "ExperimentConfig":
        """PATRESOLVE_CONFIG (else the shipped default) plus env overrides."""
        try:
            from dotenv import load_dotenv
            load_dotenv()
        except ImportError:
            pass
        cfg = cls.from_file(os.getenv("PATRESOLVE_CONFIG", str(DEFAULT_CONFIG_PATH)))
        overrides = {}
        if os.getenv("PATRESOLVE_OUT"):
            overrides["output_dir"] = os.environ["PATRESOLVE_OUT"]
        if os.getenv("PATRESOLVE_WORKERS"):
            try:
                overrides["workers"] = int(os.environ["PATRESOLVE_WORKERS"])
            except ValueError as e:
                raise ConfigError("forward.workers", "PATRESOLVE_WORKERS must be an integer") from e
        return cfg.with_overrides(**overrides) if overrides else cfg

    def with_overrides(
        self,
        output_dir: Optional[str] = None,
        seed: Optional[int] = None,
        subsample: Optional[int] = None,
        write_timestamp: Optional[bool] = None,
        workers: Optional[int] = None,
        sweep_factors: Optional[List[float]] = None,
    ) -> "ExperimentConfig":
        """Apply command-line / environment overrides and re-validate."""
        data = self.model_dump()
        for key, val in (("output_dir", output_dir), ("seed", seed), ("subsample", subsample),
                         ("write_timestamp", write_timestamp)):
            if val is not None:
                data[key] = val
        if workers is not None:
            data["forward"]["workers"] = workers
        if sweep_factors is not None:
            data["sampling"]["sweep_factors"] = list(sweep_factors)
        return ExperimentConfig.from_dict(data)

    # ── Cross-reference checks ─────────────────────────────────────

    def check_consistency(self) -> None:
        """Checks that need more than one section; raise ConfigError(key_path)."""
        igrid = self.image_grid_spec()
        if self.subsample > self.geometry.num_sensors:
            raise ConfigError("subsample", f"{self.subsample} exceeds geometry.num_sensors")
        if igrid.R0 >= self.geometry.radius:
            raise ConfigError(
                "image_grid.support_radius",
                f"support radius {igrid.R0:.4g} mm reaches the sensor circle at {self.geometry.radius:.4g} mm",
            )
        if self.phantom.kind == "grid":
            spec = self.phantom_spec()
            lim = 0.5 * igrid.side
            off = max(abs(spec.center[0] - igrid.center[0]), abs(spec.center[1] - igrid.center[1]))
            if spec.half_span + off > lim + 1e-9 * igrid.spacing:
                raise ConfigError("phantom.extent", f"grid phantom spans ±{spec.half_span:.4g} mm, grid only ±{lim:.4g} mm")
        elif self.phantom.kind == "disc" and self.phantom.radius > igrid.R0:
            raise ConfigError("phantom.radius", f"disc radius exceeds the support radius {igrid.R0:.4g} mm")

        geom = self.sensor_geometry()
        lo, hi = time_window_for(geom, igrid)
        if not self.time_grid_spec().covers(lo, hi):
            needed = hi / self.geometry.sound_speed
            raise ConfigError("time_grid.duration_us", f"window must reach {needed:.4g} µs to cover all signals")
        try:
            check_representable(self.filter_spec(), self.time_grid_spec(fine=True).step, "refined time grid")
        except AliasingError as e:
            raise ConfigError("filter.bandwidth", str(e)) from e

    # ── Engine objects ─────────────────────────────────────────────

    def sensor_geometry(self, subsampled: bool = False) -> SensorGeometry:
        g = self.geometry
        coverage = 2.0 * math.pi if g.coverage_deg == 360 else math.radians(g.coverage_deg)
        geom = SensorGeometry(
            radius=g.radius,
            num_sensors=g.num_sensors,
            coverage=coverage,
            start_angle=math.radians(g.start_angle_deg),
            sound_speed=g.sound_speed,
            angle_convention=g.angle_convention,
        )
        return decimate_geometry(geom, self.subsample) if subsampled else geom

    def image_grid_spec(self) -> ImageGrid:
        s = self.image_grid
        return ImageGrid(
            spacing=s.side / (s.samples_per_axis - 1),
            samples_per_axis=s.samples_per_axis,
            center=s.center,
            support_radius=s.support_radius,
        )

    def time_grid_spec(self, fine: bool = False) -> TimeGrid:
        """Data time grid in rescaled units (mm); ``fine`` refines it by the oversampling factor."""
        t = self.time_grid
        c = self.geometry.sound_speed
        step = t.step if t.step is not None else self.image_grid_spec().spacing
        start = c * t.start_us
        coarse = TimeGrid.spanning(step, start + c * t.duration_us, start=start)
        return coarse.refine(t.oversampling) if fine else coarse

    def filter_spec(self) -> FilterSpec:
        f = self.filter
        return FilterSpec(f.bandwidth, f.kind, f.attenuation)

    def basis(self) -> BumpBasis:
        return BumpBasis(self.image_grid_spec().spacing, self.forward.basis_exponent)

    def phantom_spec(self) -> GridPhantomSpec:
        p = self.phantom
        try:
            return GridPhantomSpec(
                pitch=p.pitch,
                bar_width=p.bar_width if p.bar_width is not None else 0.5 * p.pitch,
                extent=p.extent,
                amplitude=p.amplitude,
                orientation=math.radians(p.orientation_deg),
                center=p.center,
            )
        except ValueError as e:
            raise ConfigError("phantom", str(e)) from e

    def tikhonov_config(self) -> TikhonovConfig:
        t = self.methods.tikhonov
        return TikhonovConfig(t.lam, t.max_iters, t.normal_residual_tol)

    def l1pos_config(self) -> L1PosConfig:
        m = self.methods.l1pos
        return L1PosConfig(m.mu, m.max_iters, m.step_size, m.objective_tol, m.restart, m.norm_iters, self.seed)

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)
