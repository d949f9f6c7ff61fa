"""
pipeline_service.py — The four experiment pipelines behind the CLI.

  cmd_phantom          rasterize the configured phantom → phantom.raster / .pgm
  cmd_simulate         phantom → W on the refined time grid → φ_Ω → decimate
                       in time (and optionally in angle) → sinogram.sino
  cmd_reconstruct      sinogram → Tikhonov or ℓ¹+positivity on S∘φ_Ω∘W →
                       recon_<method>.raster / .pgm, metrics, convergence CSV
  cmd_sampling_report  Nyquist bookkeeping, optional stability probe and
                       angular sweep on a downscaled copy

Every command is a pure function of the config (and the sinogram file for
reconstruct); payloads are byte-identical across runs.
"""
from __future__ import annotations

import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from rich.console import Console
from rich.table import Table

_engine_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), "engine")
if _engine_dir not in sys.path:
    sys.path.insert(0, _engine_dir)

from bandlimit_filter import decimate_sinogram, filter_sinogram
from geometry_types import (
    CoefficientImage,
    DegenerateInputError,
    ImageGrid,
    SensorGeometry,
    Sinogram,
    TimeGrid,
    time_window_for,
)
from phantom import BumpBasis, disc_phantom, random_bandlimited_phantom, rasterize_grid_phantom
from recon import MetricsReport, compute_metrics, solve_l1pos, solve_tikhonov
from sampling_analysis import (
    SamplingReport,
    angular_builder,
    compute_report,
    nyquist_sweep,
    probe_stability,
    sampled_operator,
    write_sweep_csv,
)
from wave_forward import ForwardOperator, apply, build_forward

from config import METHODS, ConfigError, ExperimentConfig
from raster_io import RasterFile, SinogramFile, write_pgm

log = logging.getLogger(__name__)

_console = Console()


def _out(cfg: ExperimentConfig) -> Path:
    path = cfg.output_path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _created(cfg: ExperimentConfig) -> Optional[str]:
    return datetime.now(timezone.utc).isoformat() if cfg.write_timestamp else None


def _same_time_grid(a: TimeGrid, b: TimeGrid) -> bool:
    return (a.num_samples == b.num_samples
            and math.isclose(a.step, b.step, rel_tol=1e-12)
            and math.isclose(a.start, b.start, rel_tol=1e-12, abs_tol=1e-12))


def _table(title: str, rows: List[Tuple[str, str]]) -> Table:
    table = Table(title=title)
    table.add_column("quantity")
    table.add_column("value", justify="right")
    for k, v in rows:
        table.add_row(k, v)
    return table


# ══════════════════════════════════════════════════════════════════
# BUILDING BLOCKS
# ══════════════════════════════════════════════════════════════════

def build_phantom(cfg: ExperimentConfig) -> CoefficientImage:
    igrid = cfg.image_grid_spec()
    p = cfg.phantom
    if p.kind == "grid":
        return rasterize_grid_phantom(cfg.phantom_spec(), igrid)
    if p.kind == "disc":
        return disc_phantom(igrid, p.radius, center=p.center, amplitude=p.amplitude)
    band = p.bandwidth if p.bandwidth is not None else cfg.filter.bandwidth
    return random_bandlimited_phantom(igrid, band, cfg.seed).scaled(p.amplitude)


def build_operator(cfg: ExperimentConfig, geom: SensorGeometry, tgrid: TimeGrid,
                   igrid: Optional[ImageGrid] = None) -> ForwardOperator:
    igrid = igrid or cfg.image_grid_spec()
    f = cfg.forward
    return build_forward(
        geom, tgrid, igrid, BumpBasis(igrid.spacing, f.basis_exponent),
        radial_oversampling=f.radial_oversampling,
        normalization=f.normalization,
        workers=f.workers,
    )


def simulate_sinogram(cfg: ExperimentConfig, x: Optional[CoefficientImage] = None) -> Sinogram:
    """Dense array on the refined grid, filtered there, then decimated."""
    x = build_phantom(cfg) if x is None else x
    op = build_operator(cfg, cfg.sensor_geometry(), cfg.time_grid_spec(fine=True))
    g = filter_sinogram(apply(op, x), cfg.filter_spec())
    return decimate_sinogram(g, time_factor=cfg.time_grid.oversampling, sensor_factor=cfg.subsample)


# ══════════════════════════════════════════════════════════════════
# COMMANDS
# ══════════════════════════════════════════════════════════════════

def cmd_phantom(cfg: ExperimentConfig, console: Optional[Console] = None) -> RasterFile:
    console = console or _console
    x = build_phantom(cfg)
    out = _out(cfg)
    raster = RasterFile.from_image(x, meta={"phantom": cfg.phantom.model_dump(mode="json"), "seed": cfg.seed})
    raster.write(out / "phantom.raster", created=_created(cfg))
    write_pgm(out / "phantom.pgm", x.as_array())

    igrid = x.grid
    extent = cfg.phantom.extent if cfg.phantom.kind == "grid" else 2 * cfg.phantom.radius
    console.print(_table("phantom", [
        ("kind", cfg.phantom.kind),
        ("grid", f"{igrid.samples_per_axis}×{igrid.samples_per_axis}, h_x = {igrid.spacing:.4f} mm"),
        ("nonzero nodes", str(int(np.count_nonzero(x.coefficients)))),
        ("extent", f"{extent:.4g} mm"),
    ]))
    log.info("phantom: %d nonzero coefficients", int(np.count_nonzero(x.coefficients)))
    return raster


def cmd_simulate(cfg: ExperimentConfig, console: Optional[Console] = None) -> SinogramFile:
    console = console or _console
    g = simulate_sinogram(cfg)
    meta = {
        "filter": cfg.filter_spec().to_dict(),
        "subsample": cfg.subsample,
        "time_oversampling": cfg.time_grid.oversampling,
        "phantom": cfg.phantom.model_dump(mode="json"),
        "seed": cfg.seed,
    }
    sino = SinogramFile.from_sinogram(g, meta)
    sino.write(_out(cfg) / "sinogram.sino", created=_created(cfg))
    console.print(_table("sinogram", [
        ("sensors", str(g.geometry.num_sensors)),
        ("samples", f"{g.time_grid.num_samples} (h_t = {g.time_grid.step:.4f} mm)"),
        ("effective h_θ", f"{g.geometry.angular_step:.4f} rad"),
        ("window", f"{g.time_grid.start:.3f} to {g.time_grid.end:.3f} mm"),
        ("peak |g|", f"{float(np.max(np.abs(g.data))):.4g}"),
    ]))
    return sino


@dataclass
class ReconstructionOutcome:
    raster: RasterFile
    metrics: Optional[MetricsReport]
    converged: bool
    iterations: int
    final_residual: float
    paths: Dict[str, Path] = field(default_factory=dict)


def cmd_reconstruct(
    cfg: ExperimentConfig,
    sinogram_path,
    method: str,
    console: Optional[Console] = None,
) -> ReconstructionOutcome:
    """Solve with the model S∘φ_Ω∘W that produced the data; metrics against the configured phantom."""
    console = console or _console
    if method not in METHODS:
        raise ConfigError("methods", f"unknown method {method!r}; available: {', '.join(METHODS)}")
    sino = SinogramFile.read(sinogram_path)
    g = sino.to_sinogram()
    if not _same_time_grid(g.time_grid, cfg.time_grid_spec()):
        raise ConfigError("time_grid", f"sinogram time grid {g.time_grid} differs from the configured one")
    if not math.isclose(g.geometry.radius, cfg.geometry.radius, rel_tol=1e-12):
        raise ConfigError("geometry.radius", f"sinogram radius {g.geometry.radius} differs from the config")

    factor = cfg.time_grid.oversampling
    op = build_operator(cfg, g.geometry, g.time_grid.refine(factor))
    A = sampled_operator(op, cfg.filter_spec(), 1, factor)
    if method == "tikhonov":
        sol = solve_tikhonov(A, g.data.ravel(), cfg.tikhonov_config())
    else:
        sol = solve_l1pos(A, g.data.ravel(), cfg.l1pos_config())
    x = CoefficientImage(op.image_grid, sol.x)

    out = _out(cfg)
    paths = {
        "raster": out / f"recon_{method}.raster",
        "pgm": out / f"recon_{method}.pgm",
        "metrics": out / f"metrics_{method}.json",
        "convergence": out / f"convergence_{method}.csv",
    }
    raster = RasterFile.from_image(x, meta={"method": method, "converged": sol.converged, "iterations": sol.iterations})
    raster.write(paths["raster"], created=_created(cfg))
    write_pgm(paths["pgm"], x.as_array())
    sol.log.to_csv(paths["convergence"])

    metrics = None
    spec = cfg.phantom_spec() if cfg.phantom.kind == "grid" else None
    try:
        metrics = compute_metrics(x, build_phantom(cfg), spec, cfg.metrics.threshold, cfg.metrics.samples_per_pitch)
    except DegenerateInputError as e:
        log.warning("metrics skipped: %s", e)
    summary = {"method": method, "converged": sol.converged, "iterations": sol.iterations,
               "final_residual": sol.final_residual, "metrics": metrics.to_dict() if metrics else None}
    paths["metrics"].write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")

    rows = [("method", method), ("iterations", str(sol.iterations)), ("converged", str(sol.converged))]
    if metrics is not None:
        rows += [
            ("relative L² error", f"{metrics.relative_l2_error:.4f}"),
            ("PSNR", f"{metrics.psnr:.2f} dB"),
            ("grid contrast", "n/a" if metrics.grid_contrast is None else f"{metrics.grid_contrast:.3f}"),
            ("windows clipped", "n/a" if metrics.clipped_window_share is None else f"{metrics.clipped_window_share:.0%}"),
            ("resolved", str(metrics.resolved_flag)),
        ]
    console.print(_table("reconstruction", rows))
    return ReconstructionOutcome(raster, metrics, sol.converged, sol.iterations, sol.final_residual, paths)


# ══════════════════════════════════════════════════════════════════
# SAMPLING REPORT
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class ProbeSetup:
    """Downscaled copy with the same h_x, Ω and angular undersampling factor."""
    geometry: SensorGeometry
    image_grid: ImageGrid
    time_grid: TimeGrid
    R0: float


def probe_setup(cfg: ExperimentConfig) -> ProbeSetup:
    igrid = cfg.image_grid_spec()
    geom = cfg.sensor_geometry(subsampled=True)
    n = cfg.sampling.samples_per_axis
    scale = (n - 1) / (igrid.samples_per_axis - 1)
    R0 = igrid.R0 * scale
    small = ImageGrid(igrid.spacing, n, support_radius=R0)
    h_theta = geom.angular_step / scale
    m = max(1, int(round(geom.coverage / h_theta)))
    small_geom = SensorGeometry(
        radius=geom.radius * scale, num_sensors=m, coverage=geom.coverage,
        start_angle=geom.start_angle, sound_speed=geom.sound_speed, step=h_theta if m > 1 else None,
    )
    _, hi = time_window_for(small_geom, small)
    coarse = TimeGrid.spanning(cfg.time_grid_spec().step, hi + 2.0 * R0)
    return ProbeSetup(small_geom, small, coarse.refine(cfg.time_grid.oversampling), R0)


def cmd_sampling_report(
    cfg: ExperimentConfig,
    probe: bool = False,
    sweep: bool = False,
    console: Optional[Console] = None,
) -> SamplingReport:
    console = console or _console
    igrid = cfg.image_grid_spec()
    report = compute_report(cfg.sensor_geometry(subsampled=True), igrid, cfg.time_grid_spec(), cfg.filter.bandwidth)
    payload: dict = {"report": report.to_dict()}
    out = _out(cfg)

    if probe or sweep:
        setup = probe_setup(cfg)
        stride = cfg.time_grid.oversampling
        s = cfg.sampling
        log.info(
            "probe copy: %d² grid, R0 = %.3g mm, %d sensors at %.3g mm",
            setup.image_grid.samples_per_axis, setup.R0, setup.geometry.num_sensors, setup.geometry.radius,
        )
        if probe:
            op = build_operator(cfg, setup.geometry, setup.time_grid, setup.image_grid)
            sig_min, sig_max = probe_stability(
                op, setup.R0, cfg.filter.bandwidth, s.num_probes, cfg.seed,
                time_stride=stride, power_iters=s.power_iters,
            )
            payload["probe"] = {
                "samples_per_axis": setup.image_grid.samples_per_axis,
                "support_radius": setup.R0,
                "num_sensors": setup.geometry.num_sensors,
                "sigma_min": sig_min,
                "sigma_max": sig_max,
            }
        if sweep:
            f = cfg.forward
            builder = angular_builder(
                setup.geometry.radius, setup.time_grid, setup.image_grid,
                cfg.basis(),
                radial_oversampling=f.radial_oversampling, workers=f.workers,
            )
            rows = nyquist_sweep(
                builder, cfg.filter.bandwidth, setup.R0, s.sweep_factors,
                num_probes=s.num_probes, seed=cfg.seed, time_stride=stride,
            )
            write_sweep_csv(rows, out / "nyquist_sweep.csv")

    (out / "sampling_report.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")

    console.print(_table("sampling report", [
        ("Ω", f"{report.bandwidth:.4g} rad/mm"),
        ("R0", f"{report.support_radius:.4g} mm"),
        ("h_t / Nyquist", f"{report.h_t:.4f} / {report.nyquist_h_t:.4f} mm"),
        ("h_x / Nyquist", f"{report.h_x:.4f} / {report.nyquist_h_x:.4f} mm"),
        ("h_θ / Nyquist", f"{report.h_theta:.4f} / {report.nyquist_h_theta:.5f} rad"),
        ("angular undersampling", f"{report.undersampling_factor_angular:.2f}×"),
        ("resolved disc radius", f"{report.resolved_disc_radius:.3f} mm"),
        ("all conditions met", str(report.all_ok)),
    ]))
    if "probe" in payload:
        console.print(f"σ_min = {payload['probe']['sigma_min']:.4g}, σ_max = {payload['probe']['sigma_max']:.4g}")
    return report
