"""Unit tests for raster/sinogram files and PGM export."""
import numpy as np
import pytest

from geometry_types import CoefficientImage, ImageGrid, SensorGeometry, Sinogram, TimeGrid
from raster_io import (
    RASTER_MAGIC,
    RasterFile,
    RasterFormatError,
    SinogramFile,
    read_pgm,
    write_pgm,
)


def _make_image(n: int = 7, seed: int = 0) -> CoefficientImage:
    grid = ImageGrid(0.3, n, center=(0.5, -0.25), support_radius=0.9)
    vals = np.random.default_rng(seed).standard_normal(n * n).astype(np.float32)
    return CoefficientImage(grid, vals.astype(np.float64))


def _make_sinogram() -> Sinogram:
    geom = SensorGeometry(radius=12.5, num_sensors=5, coverage=2.0, start_angle=0.3, sound_speed=1.5,
                          angle_convention="endpoints")
    tgrid = TimeGrid(0.125, 11, start=2.0)
    data = np.random.default_rng(1).standard_normal((5, 11)).astype(np.float32)
    return Sinogram(geom, tgrid, data.astype(np.float64))


# ═══════════════════════════════════════════════════════════════════
# Raster files
# ═══════════════════════════════════════════════════════════════════

def test_raster_round_trip_is_bit_exact(tmp_path):
    x = _make_image()
    raster = RasterFile.from_image(x, meta={"kind": "test"})
    path = raster.write(tmp_path / "x.raster")
    back = RasterFile.read(path)
    assert back.grid == x.grid
    assert back.data.tobytes() == raster.data.tobytes()
    assert back.meta == {"kind": "test"}
    np.testing.assert_array_equal(back.to_image().coefficients, x.coefficients)


def test_raster_header_is_readable_text(tmp_path):
    path = RasterFile.from_image(_make_image()).write(tmp_path / "x.raster", created="2024-01-01T00:00:00")
    with open(path, "rb") as f:
        assert f.readline() == f"{RASTER_MAGIC} 1\n".encode()
        header = f.readline().decode()
    assert '"dims": [7, 7]' in header
    assert '"created": "2024-01-01T00:00:00"' in header


def test_no_timestamp_means_identical_files(tmp_path):
    raster = RasterFile.from_image(_make_image())
    a = raster.write(tmp_path / "a.raster").read_bytes()
    b = raster.write(tmp_path / "b.raster").read_bytes()
    assert a == b


def test_bad_magic(tmp_path):
    path = tmp_path / "x.raster"
    path.write_bytes(b"NOT-A-RASTER 1\n{}\n")
    with pytest.raises(RasterFormatError):
        RasterFile.read(path)


def test_sinogram_is_not_a_raster(tmp_path):
    path = SinogramFile.from_sinogram(_make_sinogram()).write(tmp_path / "g.sino")
    with pytest.raises(RasterFormatError):
        RasterFile.read(path)


def test_unsupported_version(tmp_path):
    path = RasterFile.from_image(_make_image()).write(tmp_path / "x.raster")
    raw = path.read_bytes()
    path.write_bytes(raw.replace(f"{RASTER_MAGIC} 1".encode(), f"{RASTER_MAGIC} 9".encode(), 1))
    with pytest.raises(RasterFormatError):
        RasterFile.read(path)


def test_truncated_payload(tmp_path):
    path = RasterFile.from_image(_make_image()).write(tmp_path / "x.raster")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(RasterFormatError):
        RasterFile.read(path)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        RasterFile.read(tmp_path / "missing.raster")


# ═══════════════════════════════════════════════════════════════════
# Sinogram files
# ═══════════════════════════════════════════════════════════════════

def test_sinogram_round_trip(tmp_path):
    g = _make_sinogram()
    sino = SinogramFile.from_sinogram(g, meta={"subsample": 2})
    back = SinogramFile.read(sino.write(tmp_path / "g.sino"))
    assert back.geometry == g.geometry
    assert back.time_grid == g.time_grid
    assert back.data.tobytes() == sino.data.tobytes()
    assert back.meta["subsample"] == 2
    np.testing.assert_array_equal(back.to_sinogram().data, g.data)


def test_decimated_geometry_survives(tmp_path):
    """An explicit angular step (from sensor decimation) is part of the header."""
    g = _make_sinogram()
    geom = SensorGeometry(radius=10.0, num_sensors=4, coverage=6.0, step=1.5)
    g = Sinogram(geom, g.time_grid, g.data[:4])
    back = SinogramFile.read(SinogramFile.from_sinogram(g).write(tmp_path / "g.sino"))
    assert back.geometry.angular_step == 1.5


# ═══════════════════════════════════════════════════════════════════
# PGM
# ═══════════════════════════════════════════════════════════════════

def test_pgm_window_and_orientation(tmp_path):
    img = np.zeros((3, 4))
    img[0, 0] = 2.0   # smallest y, smallest x
    img[2, 3] = -1.0
    lo, hi = write_pgm(tmp_path / "x.pgm", img)
    assert (lo, hi) == (-1.0, 2.0)
    raw = (tmp_path / "x.pgm").read_bytes()
    assert raw.startswith(b"P5\n")
    pixels, window = read_pgm(tmp_path / "x.pgm")
    assert window == (-1.0, 2.0)
    assert pixels.shape == (3, 4)
    assert pixels[0, 0] == 65535
    assert pixels[2, 3] == 0
    assert pixels[1, 1] == round(65535 / 3)


def test_pgm_constant_image(tmp_path):
    write_pgm(tmp_path / "c.pgm", np.ones((2, 2)))
    pixels, _ = read_pgm(tmp_path / "c.pgm")
    assert not np.any(pixels)


def test_pgm_explicit_window_clips(tmp_path):
    img = np.array([[-5.0, 0.5], [1.0, 5.0]])
    write_pgm(tmp_path / "w.pgm", img, window=(0.0, 1.0))
    pixels, window = read_pgm(tmp_path / "w.pgm")
    assert window == (0.0, 1.0)
    assert pixels[0, 0] == 0 and pixels[1, 1] == 65535
