"""
test_phantom.py — Bump basis, synthesis and the test objects.
"""
import math
import unittest

import numpy as np
from scipy import integrate, special

from geometry_types import CoefficientImage, DegenerateInputError, ImageGrid
from phantom import (
    BumpBasis,
    GridPhantomSpec,
    bump_integral,
    disc_phantom,
    nearest_node,
    point_phantom,
    random_bandlimited_phantom,
    rasterize_grid_phantom,
    spectral_energy_fraction,
    synthesize,
)


# ── Helpers ───────────────────────────────────────────────────────

def brute_circular_mean(basis: BumpBasis, d: float, r: float, n: int = 20000) -> float:
    """Mean of a bump at (d, 0) over the circle of radius r, by uniform angles."""
    phi = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    dist = np.hypot(r * np.cos(phi) - d, r * np.sin(phi))
    return float(np.mean(basis.profile(dist)))


# ══════════════════════════════════════════════════════════════════
# 1. BUMP BASIS
# ══════════════════════════════════════════════════════════════════

class TestBumpBasis(unittest.TestCase):

    def test_unit_integral(self):
        for nu in (1, 2, 3):
            self.assertAlmostEqual(bump_integral(BumpBasis(0.7, nu)), 1.0, places=10)

    def test_support(self):
        b = BumpBasis(0.5)
        self.assertAlmostEqual(float(b.profile(0.0)), b.peak)
        self.assertEqual(float(b.profile(0.5)), 0.0)
        self.assertEqual(float(b.profile(0.9)), 0.0)

    def test_fourier_transform_matches_hankel(self):
        """Closed-form û against the radial Hankel integral of the profile."""
        b = BumpBasis(0.7, 2)
        for k in (0.5, 3.0, 11.0):
            ref, _ = integrate.quad(
                lambda r: 2 * math.pi * r * float(b.profile(r)) * special.j0(k * r),
                0.0, b.spacing, epsabs=1e-13, epsrel=1e-12,
            )
            self.assertAlmostEqual(float(b.fourier_transform(k)), ref, places=9)

    def test_fourier_transform_at_zero(self):
        b = BumpBasis(1.3, 3)
        self.assertAlmostEqual(float(b.fourier_transform(0.0)), 1.0, places=12)
        self.assertAlmostEqual(float(b.fourier_transform(1e-8)), 1.0, places=12)

    def test_circular_mean_against_brute_force(self):
        b = BumpBasis(0.4, 2)
        for d, r in ((0.7, 0.5), (0.7, 0.95), (1.5, 1.2), (0.2, 0.3)):
            self.assertAlmostEqual(
                float(b.circular_mean(d, r)) / b.peak, brute_circular_mean(b, d, r) / b.peak, places=6,
            )

    def test_circular_mean_vanishes_outside_shell(self):
        b = BumpBasis(0.4)
        self.assertEqual(float(b.circular_mean(2.0, 1.5)), 0.0)
        self.assertEqual(float(b.circular_mean(2.0, 2.4)), 0.0)

    def test_circular_mean_centred(self):
        """A centred circle sees the profile value."""
        b = BumpBasis(0.4)
        self.assertAlmostEqual(float(b.circular_mean(0.0, 0.1)), float(b.profile(0.1)))

    def test_invalid_basis(self):
        with self.assertRaises(ValueError):
            BumpBasis(0.0)
        with self.assertRaises(ValueError):
            BumpBasis(1.0, 0)


class TestSynthesis(unittest.TestCase):

    def test_values_at_nodes(self):
        """Neighbouring bumps vanish at each other's centres."""
        g = ImageGrid(0.5, 6)
        b = BumpBasis(0.5)
        x = random_bandlimited_phantom(g, 4.0, seed=3)
        vals = synthesize(x, b, g.node_coordinates())
        np.testing.assert_allclose(vals, b.peak * x.coefficients, rtol=1e-10, atol=1e-12)

    def test_single_bump_off_node(self):
        g = ImageGrid(1.0, 3)
        b = BumpBasis(1.0)
        x = point_phantom(g, 4)
        self.assertAlmostEqual(float(synthesize(x, b, [[0.3, 0.4]])[0]), float(b.profile(0.5)))

    def test_matches_dense_summation(self):
        """Random 8×8 coefficients against the sum over every bump."""
        g = ImageGrid(0.7, 8, center=(0.3, -0.2))
        b = BumpBasis(0.7)
        rng = np.random.default_rng(8)
        x = CoefficientImage(g, rng.standard_normal(g.num_nodes))
        half = 0.5 * g.side
        pts = np.column_stack([rng.uniform(-half, half, 500) + 0.3, rng.uniform(-half, half, 500) - 0.2])
        nodes = g.node_coordinates()
        dist = np.hypot(pts[:, None, 0] - nodes[None, :, 0], pts[:, None, 1] - nodes[None, :, 1])
        dense = b.profile(dist) @ x.coefficients
        np.testing.assert_allclose(synthesize(x, b, pts), dense, rtol=1e-12, atol=1e-12 * b.peak)


# ══════════════════════════════════════════════════════════════════
# 2. GRID PHANTOM
# ══════════════════════════════════════════════════════════════════

class TestGridPhantom(unittest.TestCase):

    def test_solid_square(self):
        """bar_width = pitch fills the square: 11×11 nodes on a unit lattice."""
        spec = GridPhantomSpec(pitch=2.0, bar_width=2.0, extent=10.0)
        x = rasterize_grid_phantom(spec, ImageGrid(1.0, 21))
        self.assertEqual(int(np.count_nonzero(x.coefficients)), 121)

    def test_bars_and_gaps(self):
        g = ImageGrid(1.0, 21)
        spec = GridPhantomSpec(pitch=4.0, bar_width=2.0, extent=16.0, amplitude=2.5)
        x = rasterize_grid_phantom(spec, g)
        on = x.coefficients[nearest_node(g, (0.0, 2.0))]
        off = x.coefficients[nearest_node(g, (2.0, 2.0))]
        outside = x.coefficients[nearest_node(g, (9.0, 0.0))]
        self.assertEqual(on, 2.5)
        self.assertEqual(off, 0.0)
        self.assertEqual(outside, 0.0)

    def test_rotated_phantom_symmetric(self):
        """A 90° turn maps the bar pattern onto itself."""
        g = ImageGrid(0.5, 41)
        a = rasterize_grid_phantom(GridPhantomSpec(2.0, 1.0, 12.0), g)
        b = rasterize_grid_phantom(GridPhantomSpec(2.0, 1.0, 12.0, orientation=math.pi / 2), g)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    def test_phantom_larger_than_grid(self):
        with self.assertRaises(ValueError):
            rasterize_grid_phantom(GridPhantomSpec(2.0, 1.0, 30.0), ImageGrid(1.0, 21))

    def test_invalid_spec(self):
        with self.assertRaises(ValueError):
            GridPhantomSpec(pitch=1.0, bar_width=1.5, extent=10.0)
        with self.assertRaises(ValueError):
            GridPhantomSpec(pitch=5.0, bar_width=1.0, extent=4.0)
        with self.assertRaises(ValueError):
            GridPhantomSpec(pitch=1.0, bar_width=0.0, extent=4.0)

    def test_bar_area(self):
        """Bars of half the pitch cover 3/4 of the square; nodes and Monte Carlo agree."""
        spec = GridPhantomSpec(pitch=2.0, bar_width=1.0, extent=12.0, orientation=0.3)
        rng = np.random.default_rng(5)
        u, v = rng.uniform(-6.0, 6.0, (2, 200000))
        c, s = math.cos(0.3), math.sin(0.3)
        pts = np.column_stack([c * u - s * v, s * u + c * v])
        self.assertAlmostEqual(float(np.mean(spec.indicator(pts))), 0.75, delta=0.005)
        g = ImageGrid(0.05, 321)
        x = rasterize_grid_phantom(spec, g)
        area = np.count_nonzero(x.coefficients) * g.spacing ** 2
        self.assertAlmostEqual(area / 144.0, 0.75, delta=0.02)


# ══════════════════════════════════════════════════════════════════
# 3. OTHER OBJECTS
# ══════════════════════════════════════════════════════════════════

class TestRandomPhantom(unittest.TestCase):

    def setUp(self):
        self.grid = ImageGrid(1.0, 64, support_radius=24.0)

    def test_deterministic(self):
        a = random_bandlimited_phantom(self.grid, math.pi, seed=7)
        b = random_bandlimited_phantom(self.grid, math.pi, seed=7)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)

    def test_peak_and_support(self):
        x = random_bandlimited_phantom(self.grid, math.pi, seed=1)
        self.assertAlmostEqual(float(np.max(np.abs(x.coefficients))), 1.0)
        self.assertTrue(np.all(x.coefficients[~self.grid.support_mask()] == 0.0))

    def test_in_band_energy(self):
        x = random_bandlimited_phantom(self.grid, math.pi, seed=2)
        self.assertGreaterEqual(spectral_energy_fraction(x, math.pi), 0.9999)

    def test_seeds_differ(self):
        a = random_bandlimited_phantom(self.grid, math.pi, seed=1)
        b = random_bandlimited_phantom(self.grid, math.pi, seed=2)
        self.assertFalse(np.allclose(a.coefficients, b.coefficients))

    def test_small_support_keeps_band_limit(self):
        """R0·Ω too small for the taper margin: the leak bound still holds."""
        cases = (
            (ImageGrid(0.5, 9), 3.0),
            (ImageGrid(1.0, 16, support_radius=5.0), 0.8 * math.pi),
            (ImageGrid(0.5, 17, support_radius=3.0), 3.0),
        )
        for grid, Omega in cases:
            a = random_bandlimited_phantom(grid, Omega, seed=0)
            b = random_bandlimited_phantom(grid, Omega, seed=1)
            self.assertLess(1.0 - spectral_energy_fraction(a, Omega), 1e-4)
            self.assertLess(1.0 - spectral_energy_fraction(b, Omega), 1e-4)
            self.assertTrue(np.all(a.coefficients[~grid.support_mask()] == 0.0))
            self.assertAlmostEqual(float(np.max(np.abs(a.coefficients))), 1.0)
            self.assertFalse(np.allclose(a.coefficients, b.coefficients))

    def test_unreachable_band_limit(self):
        """Four support nodes and only the DC frequency in band."""
        with self.assertRaises(DegenerateInputError):
            random_bandlimited_phantom(ImageGrid(1.0, 8, support_radius=1.0), 0.5, seed=0)


class TestSimpleObjects(unittest.TestCase):

    def test_disc_phantom_count(self):
        x = disc_phantom(ImageGrid(1.0, 11), radius=2.0)
        self.assertEqual(int(np.count_nonzero(x.coefficients)), 13)

    def test_nearest_node(self):
        self.assertEqual(nearest_node(ImageGrid(1.0, 3), (0.9, -0.8)), 2)

    def test_empty_spectrum(self):
        self.assertEqual(spectral_energy_fraction(CoefficientImage.zeros(ImageGrid(1.0, 4)), 1.0), 1.0)


if __name__ == "__main__":
    unittest.main(verbosity=2)
