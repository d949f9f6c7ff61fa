"""
test_geometry_types.py — Sensor geometry, grids and data containers.
"""
import math
import unittest

import numpy as np

from geometry_types import (
    CoefficientImage,
    GridMismatchError,
    ImageGrid,
    SensorGeometry,
    Sinogram,
    TimeGrid,
    check_same_grid,
    decimate_geometry,
    rescale_time,
    sensor_positions,
    time_window_for,
)


# ── Helpers ───────────────────────────────────────────────────────

def ring(m: int = 4, radius: float = 2.0, **kw) -> SensorGeometry:
    return SensorGeometry(radius=radius, num_sensors=m, **kw)


# ══════════════════════════════════════════════════════════════════
# 1. SENSOR GEOMETRY
# ══════════════════════════════════════════════════════════════════

class TestSensorGeometry(unittest.TestCase):

    def test_full_circle_positions(self):
        """Four sensors on R = 2 sit on the axes, counter-clockwise from +x."""
        pos = sensor_positions(ring())
        expected = np.array([[2, 0], [0, 2], [-2, 0], [0, -2]], dtype=float)
        np.testing.assert_allclose(pos, expected, atol=1e-12)

    def test_start_angle_rotates_every_sensor(self):
        delta = 0.37
        base = sensor_positions(ring(m=7, radius=3.0, coverage=math.radians(250)))
        turned = sensor_positions(ring(m=7, radius=3.0, coverage=math.radians(250), start_angle=delta))
        c, s = math.cos(delta), math.sin(delta)
        np.testing.assert_allclose(turned, base @ np.array([[c, s], [-s, c]]), atol=1e-12)

    def test_single_sensor_at_start_angle(self):
        pos = sensor_positions(ring(m=1, radius=2.5, start_angle=math.pi))
        np.testing.assert_allclose(pos, [[-2.5, 0.0]], atol=1e-12)

    def test_all_sensors_on_circle(self):
        pos = sensor_positions(ring(m=17, radius=3.5, coverage=math.radians(289)))
        np.testing.assert_allclose(np.hypot(pos[:, 0], pos[:, 1]), 3.5, rtol=1e-12)

    def test_partial_coverage_per_sensor(self):
        """289° over 64 sensors gives h_θ ≈ 0.078 rad."""
        g = ring(m=64, radius=40.0, coverage=math.radians(289))
        self.assertAlmostEqual(g.angular_step, math.radians(289) / 64, places=12)
        self.assertAlmostEqual(g.angular_step, 0.0788, places=3)

    def test_partial_coverage_endpoints(self):
        """Endpoints convention puts sensors on both ends of the arc."""
        g = ring(m=3, coverage=math.pi, angle_convention="endpoints")
        np.testing.assert_allclose(g.angles(), [0.0, math.pi / 2, math.pi])

    def test_full_circle_ignores_convention(self):
        g = ring(m=8, angle_convention="endpoints")
        self.assertAlmostEqual(g.angular_step, 2 * math.pi / 8)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            ring(radius=0.0)
        with self.assertRaises(ValueError):
            ring(m=0)
        with self.assertRaises(ValueError):
            ring(coverage=7.0)
        with self.assertRaises(ValueError):
            ring(angle_convention="clockwise")

    def test_rescale_time(self):
        """1.5 mm/µs turns µs into mm."""
        np.testing.assert_allclose(rescale_time(ring(sound_speed=1.5), [1.0, 2.0]), [1.5, 3.0])

    def test_rescale_time_rejects_zero_speed(self):
        with self.assertRaises(ValueError):
            rescale_time(ring(sound_speed=0.0), [1.0])

    def test_decimation_keeps_subset(self):
        """Every second sensor; positions are an exact subset and h_θ doubles."""
        g = ring(m=9, radius=5.0, coverage=math.radians(289))
        d = decimate_geometry(g, 2)
        self.assertEqual(d.num_sensors, 5)
        self.assertAlmostEqual(d.angular_step, 2 * g.angular_step)
        np.testing.assert_allclose(sensor_positions(d), sensor_positions(g)[::2], atol=1e-12)

    def test_decimation_factor_validated(self):
        with self.assertRaises(ValueError):
            decimate_geometry(ring(), 0)
        self.assertEqual(decimate_geometry(ring(), 1), ring())

    def test_dict_round_trip(self):
        g = ring(m=5, coverage=2.0, start_angle=0.3, sound_speed=1.5)
        self.assertEqual(SensorGeometry.from_dict(g.to_dict()), g)


# ══════════════════════════════════════════════════════════════════
# 2. GRIDS
# ══════════════════════════════════════════════════════════════════

class TestImageGrid(unittest.TestCase):

    def test_axis_symmetric(self):
        a = ImageGrid(0.5, 5).axis()
        np.testing.assert_allclose(a, [-1.0, -0.5, 0.0, 0.5, 1.0])

    def test_node_order_row_major_in_y(self):
        """Node 1 is one step along x; node n is one step along y."""
        g = ImageGrid(1.0, 3, center=(10.0, 20.0))
        nodes = g.node_coordinates()
        np.testing.assert_allclose(nodes[0], [9.0, 19.0])
        np.testing.assert_allclose(nodes[1], [10.0, 19.0])
        np.testing.assert_allclose(nodes[3], [9.0, 20.0])

    def test_default_support_is_half_diagonal(self):
        g = ImageGrid(1.0, 11)
        self.assertAlmostEqual(g.R0, 5 * math.sqrt(2))
        self.assertTrue(g.support_mask().all())

    def test_support_mask_counts(self):
        """R0 = 1 on a unit lattice keeps the centre and its four neighbours."""
        g = ImageGrid(1.0, 5, support_radius=1.0)
        self.assertEqual(int(g.support_mask().sum()), 5)

    def test_invalid_grid(self):
        with self.assertRaises(ValueError):
            ImageGrid(0.0, 4)
        with self.assertRaises(ValueError):
            ImageGrid(1.0, 0)
        with self.assertRaises(ValueError):
            ImageGrid(1.0, 4, support_radius=-1.0)


class TestTimeGrid(unittest.TestCase):

    def test_spanning_reaches_end(self):
        t = TimeGrid.spanning(0.5, 2.0)
        self.assertEqual(t.num_samples, 5)
        self.assertAlmostEqual(t.end, 2.0)

    def test_refine_keeps_samples(self):
        t = TimeGrid(0.3, 7, start=1.0)
        f = t.refine(3)
        self.assertAlmostEqual(f.end, t.end)
        np.testing.assert_allclose(f.times()[::3], t.times())

    def test_decimate_matches_slicing(self):
        t = TimeGrid(0.1, 11)
        d = t.decimate(4)
        np.testing.assert_allclose(d.times(), t.times()[::4])

    def test_covers(self):
        t = TimeGrid(1.0, 11, start=2.0)
        self.assertTrue(t.covers(2.0, 12.0))
        self.assertFalse(t.covers(1.0, 12.0))
        self.assertFalse(t.covers(2.0, 12.5))

    def test_invalid_time_grid(self):
        with self.assertRaises(ValueError):
            TimeGrid(0.0, 4)
        with self.assertRaises(ValueError):
            TimeGrid(1.0, 4, start=-1.0)

    def test_time_window_single_node(self):
        """One centred node heard from R = 5 between 5 − h and 5 + h."""
        lo, hi = time_window_for(ring(radius=5.0), ImageGrid(0.25, 1))
        self.assertAlmostEqual(lo, 4.75)
        self.assertAlmostEqual(hi, 5.25)


# ══════════════════════════════════════════════════════════════════
# 3. CONTAINERS
# ══════════════════════════════════════════════════════════════════

class TestContainers(unittest.TestCase):

    def test_coefficient_image_shape_checked(self):
        with self.assertRaises(GridMismatchError):
            CoefficientImage(ImageGrid(1.0, 3), np.zeros(8))

    def test_coefficient_image_read_only(self):
        x = CoefficientImage.zeros(ImageGrid(1.0, 3))
        with self.assertRaises(ValueError):
            x.coefficients[0] = 1.0

    def test_coefficient_image_rejects_nan(self):
        v = np.zeros(9)
        v[4] = np.nan
        with self.assertRaises(ValueError):
            CoefficientImage(ImageGrid(1.0, 3), v)

    def test_array_view_orientation(self):
        """as_array()[row, col] is (y index, x index)."""
        g = ImageGrid(1.0, 3)
        x = CoefficientImage(g, np.arange(9.0))
        self.assertEqual(x.as_array()[1, 2], 5.0)
        self.assertAlmostEqual(x.norm(), float(np.linalg.norm(np.arange(9.0))))
        np.testing.assert_allclose(x.scaled(2.0).coefficients, 2 * np.arange(9.0))

    def test_sinogram_shape_checked(self):
        with self.assertRaises(GridMismatchError):
            Sinogram(ring(), TimeGrid(1.0, 5), np.zeros((4, 4)))
        g = Sinogram.zeros(ring(), TimeGrid(1.0, 5))
        self.assertEqual(g.data.shape, (4, 5))
        self.assertEqual(g.with_data(np.ones((4, 5))).norm(), math.sqrt(20))

    def test_check_same_grid(self):
        check_same_grid(ImageGrid(1.0, 3), ImageGrid(1.0, 3))
        with self.assertRaises(GridMismatchError):
            check_same_grid(ImageGrid(1.0, 3), ImageGrid(1.0, 4))


if __name__ == "__main__":
    unittest.main(verbosity=2)
