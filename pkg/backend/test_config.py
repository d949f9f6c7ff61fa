"""Unit tests for experiment configuration loading and cross-checks."""
import json
import math

import pytest

from config import DEFAULT_CONFIG_PATH, ConfigError, ExperimentConfig


def _make_data(**sections) -> dict:
    """Minimal valid experiment, small enough for fast tests; sections override."""
    data = {
        "geometry": {"radius": 5.0, "num_sensors": 16, "coverage_deg": 360.0, "sound_speed": 1.0},
        "image_grid": {"side": 4.0, "samples_per_axis": 9},
        "time_grid": {"duration_us": 10.0, "oversampling": 2},
        "filter": {"bandwidth": 3.0},
        "phantom": {"kind": "grid", "pitch": 1.0, "extent": 2.0},
    }
    for key, val in sections.items():
        if isinstance(val, dict):
            data[key] = {**data.get(key, {}), **val}
        else:
            data[key] = val
    return data


def _key_path(**sections) -> str:
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(_make_data(**sections))
    return exc.value.key_path


# ═══════════════════════════════════════════════════════════════════
# Shipped default
# ═══════════════════════════════════════════════════════════════════

def test_default_file_matches_builtin_defaults():
    """configs/default.json spells out exactly the schema defaults."""
    cfg = ExperimentConfig.from_file(DEFAULT_CONFIG_PATH)
    assert cfg.model_dump() == ExperimentConfig().model_dump()


def test_default_derived_objects():
    """h_t defaults to h_x; coverage is converted to radians."""
    cfg = ExperimentConfig.from_file(DEFAULT_CONFIG_PATH)
    igrid = cfg.image_grid_spec()
    assert igrid.spacing == pytest.approx(40.0 / 191)
    tgrid = cfg.time_grid_spec()
    assert tgrid.step == igrid.spacing
    assert tgrid.end >= 1.5 * 50.0 - 1e-9
    assert cfg.time_grid_spec(fine=True).step == pytest.approx(igrid.spacing / 4)
    geom = cfg.sensor_geometry()
    assert geom.num_sensors == 64
    assert geom.coverage == pytest.approx(math.radians(289.0))
    assert cfg.phantom_spec().bar_width == pytest.approx(cfg.phantom.pitch / 2)


def test_half_scale_file_validates():
    """The sparse-view experiment loads and gives both solvers room to converge."""
    cfg = ExperimentConfig.from_file(DEFAULT_CONFIG_PATH.parent / "half_scale.json")
    assert cfg.image_grid_spec().samples_per_axis == 96
    assert cfg.sensor_geometry().num_sensors == 64
    assert cfg.methods.tikhonov.max_iters >= 2000
    assert cfg.methods.l1pos.max_iters >= 2000
    assert cfg.methods.tikhonov.normal_residual_tol == pytest.approx(1e-3)


def test_yaml_file(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("geometry:\n  radius: 5.0\n  num_sensors: 16\n  coverage_deg: 360\n  sound_speed: 1.0\n"
                    "image_grid:\n  side: 4.0\n  samples_per_axis: 9\n"
                    "time_grid:\n  duration_us: 10.0\n  oversampling: 2\n"
                    "filter:\n  bandwidth: 3.0\n"
                    "phantom:\n  pitch: 1.0\n  extent: 2.0\n")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.sensor_geometry().is_full_circle
    assert cfg.image_grid_spec().spacing == 0.5


# ═══════════════════════════════════════════════════════════════════
# Schema errors carry the key path
# ═══════════════════════════════════════════════════════════════════

def test_unknown_key():
    assert _key_path(geometry={"radiuss": 3.0}) == "geometry.radiuss"


def test_out_of_range_value():
    assert _key_path(geometry={"radius": -1.0}) == "geometry.radius"


def test_unknown_method():
    assert _key_path(methods={"run": ["tikhonov", "landweber"]}) == "methods.run"


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict([1, 2, 3])
    assert exc.value.key_path == ""


def test_malformed_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("geometry: [unclosed\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        ExperimentConfig.from_file(tmp_path / "nope.json")


# ═══════════════════════════════════════════════════════════════════
# Cross-section consistency
# ═══════════════════════════════════════════════════════════════════

def test_subsample_exceeds_sensors():
    assert _key_path(subsample=32) == "subsample"


def test_support_reaches_sensor_circle():
    assert _key_path(image_grid={"support_radius": 6.0}) == "image_grid.support_radius"


def test_grid_phantom_outside_grid():
    assert _key_path(phantom={"extent": 10.0}) == "phantom.extent"


def test_disc_larger_than_support():
    assert _key_path(phantom={"kind": "disc", "radius": 4.0}) == "phantom.radius"


def test_time_window_too_short():
    """Signals from the far side arrive near t = R + R0 + h_x ≈ 8.3 mm."""
    assert _key_path(time_grid={"duration_us": 6.0}) == "time_grid.duration_us"


def test_filter_not_representable():
    """A Gaussian at Ω = 12 leaks far past the Nyquist limit of h_t = 0.25."""
    assert _key_path(filter={"bandwidth": 12.0}) == "filter.bandwidth"


def test_bad_bar_width():
    assert _key_path(phantom={"bar_width": 2.0}).startswith("phantom")


# ═══════════════════════════════════════════════════════════════════
# Overrides and environment
# ═══════════════════════════════════════════════════════════════════

def test_overrides_are_revalidated():
    cfg = ExperimentConfig.from_dict(_make_data())
    new = cfg.with_overrides(output_dir="elsewhere", seed=7, subsample=2, workers=3, sweep_factors=[1.0, 3.0])
    assert (new.output_dir, new.seed, new.subsample) == ("elsewhere", 7, 2)
    assert new.forward.workers == 3
    assert new.sampling.sweep_factors == [1.0, 3.0]
    assert new.sensor_geometry(subsampled=True).num_sensors == 8
    with pytest.raises(ConfigError):
        cfg.with_overrides(subsample=100)


def test_from_env(tmp_path, monkeypatch):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(_make_data()))
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("PATRESOLVE_CONFIG", str(path))
    monkeypatch.setenv("PATRESOLVE_OUT", str(tmp_path / "results"))
    monkeypatch.setenv("PATRESOLVE_WORKERS", "2")
    cfg = ExperimentConfig.from_env()
    assert cfg.output_path == tmp_path / "results"
    assert cfg.forward.workers == 2


def test_from_env_bad_workers(tmp_path, monkeypatch):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(_make_data()))
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("PATRESOLVE_CONFIG", str(path))
    monkeypatch.delenv("PATRESOLVE_OUT", raising=False)
    monkeypatch.setenv("PATRESOLVE_WORKERS", "many")
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_env()
    assert exc.value.key_path == "forward.workers"
