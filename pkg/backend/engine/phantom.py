"""
phantom.py — Bump basis, synthesis operator U* and test objects.

  - BumpBasis: u(r) = ((ν+1)/(π h²))·(1 − r²/h²)^ν on the disc of radius h,
    unit integral, with its radial Fourier transform and exact circular means
  - synthesize: U*(x) evaluated at arbitrary points (≤ 9 overlapping bumps)
  - rasterize_grid_phantom: two perpendicular periodic bar families
  - random_bandlimited_phantom: low-passed noise under a smooth taper, or a
    random mix of the best-concentrated modes when the taper leaks
  - disc_phantom: uniform disc, used by the delay and PSF checks
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy import integrate, linalg, special

from geometry_types import CoefficientImage, DegenerateInputError, GridMismatchError, ImageGrid

log = logging.getLogger(__name__)

# Gauss–Legendre order for circular means; the integrand is a polynomial in
# cos α, so this is accurate to rounding for ν ≤ 4.
CIRCULAR_MEAN_NODES = 16

# Taper width of random phantoms as a fraction of R0 (Gaussian std).
TAPER_FRACTION = 0.25
# Spectral margin kept free between the noise cutoff and Ω, in units of 1/std.
TAPER_MARGIN = 4.5
# Largest out-of-band share of lattice DFT energy a random phantom may carry.
BAND_LEAK_TOL = 1e-4
# Support size above which the dense concentration fallback is refused.
CONCENTRATION_MAX_NODES = 2500


@lru_cache(maxsize=8)
def _leggauss(n: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(n)


# ══════════════════════════════════════════════════════════════════
# BUMP BASIS
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class BumpBasis:
    """Radially symmetric ν-bump of radius h (h equals the grid spacing)."""
    spacing: float
    exponent: int = 2

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError(f"bump spacing must be > 0, got {self.spacing}")
        if int(self.exponent) != self.exponent or self.exponent < 1:
            raise ValueError(f"bump exponent must be a positive integer, got {self.exponent}")

    @property
    def peak(self) -> float:
        """u(0) = (ν+1)/(π h²)."""
        return (self.exponent + 1) / (math.pi * self.spacing ** 2)

    def profile(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        s = 1.0 - (r / self.spacing) ** 2
        return np.where(s > 0, self.peak * np.clip(s, 0.0, None) ** self.exponent, 0.0)

    def fourier_transform(self, k) -> np.ndarray:
        """û(|ξ|) = 2^{ν+1}(ν+1)!·J_{ν+1}(kh)/(kh)^{ν+1}, with û(0) = 1."""
        nu = self.exponent
        z = np.abs(np.asarray(k, dtype=np.float64)) * self.spacing
        scale = 2.0 ** (nu + 1) * math.factorial(nu + 1)
        small = z < 1e-6
        zs = np.where(small, 1.0, z)
        out = scale * special.jv(nu + 1, zs) / zs ** (nu + 1)
        return np.where(small, 1.0 - z ** 2 / (4.0 * (nu + 2)), out)

    def circular_mean(self, d, r) -> np.ndarray:
        """Mean of a bump centred at distance d over the circle of radius r.

        With cos a = (d² + r² − h²)/(2dr) the mean reduces to
        (C/π)(2dr/h²)^ν ∫_0^a (cos α − cos a)^ν dα, integrated by
        Gauss–Legendre. Vanishes unless |r − d| < h.
        """
        d, r = np.broadcast_arrays(np.asarray(d, dtype=np.float64), np.asarray(r, dtype=np.float64))
        h, nu = self.spacing, self.exponent
        out = np.zeros(d.shape)

        centred = (d * r) == 0
        if np.any(centred):
            out[centred] = self.profile(np.maximum(d[centred], r[centred]))

        live = ~centred & (np.abs(r - d) < h)
        if not np.any(live):
            return out
        dl, rl = d[live], r[live]
        cos_a = np.clip((dl * dl + rl * rl - h * h) / (2.0 * dl * rl), -1.0, 1.0)
        a = np.arccos(cos_a)

        xg, wg = _leggauss(CIRCULAR_MEAN_NODES)
        acc = np.zeros(a.shape)
        for xi, wi in zip(xg, wg):
            alpha = 0.5 * a * (1.0 + xi)
            # cos α − cos a without cancellation near α ≈ a
            diff = 2.0 * np.sin(0.5 * (a + alpha)) * np.sin(0.5 * (a - alpha))
            acc += wi * diff ** nu
        acc *= 0.5 * a
        out[live] = (self.peak / math.pi) * (2.0 * dl * rl / (h * h)) ** nu * acc
        return out


def bump_integral(basis: BumpBasis) -> float:
    """∫ u over the plane by radial quadrature (1 analytically)."""
    val, _ = integrate.quad(
        lambda r: 2.0 * math.pi * r * float(basis.profile(r)), 0.0, basis.spacing,
        epsabs=1e-13, epsrel=1e-12,
    )
    return val


# ══════════════════════════════════════════════════════════════════
# SYNTHESIS
# ══════════════════════════════════════════════════════════════════

def check_basis(x: CoefficientImage, basis: BumpBasis) -> None:
    h = x.grid.spacing
    if abs(basis.spacing - h) > 1e-12 * h:
        raise GridMismatchError(f"basis spacing {basis.spacing} differs from grid spacing {h}")


def synthesize(x: CoefficientImage, basis: BumpBasis, eval_points, chunk: int = 1 << 18) -> np.ndarray:
    """U*(x) at each point; only the 3×3 lattice neighbourhood of the nearest node is visited."""
    check_basis(x, basis)
    pts = np.asarray(eval_points, dtype=np.float64).reshape(-1, 2)
    grid = x.grid
    n, h = grid.samples_per_axis, grid.spacing
    coef = x.as_array()
    axis = grid.axis()
    out = np.zeros(len(pts))

    for lo in range(0, len(pts), chunk):
        p = pts[lo:lo + chunk]
        fx = (p[:, 0] - grid.center[0]) / h + (n - 1) / 2.0
        fy = (p[:, 1] - grid.center[1]) / h + (n - 1) / 2.0
        ix0 = np.rint(fx).astype(np.int64)
        iy0 = np.rint(fy).astype(np.int64)
        acc = np.zeros(len(p))
        for dy in (-1, 0, 1):
            iy = iy0 + dy
            for dx in (-1, 0, 1):
                ix = ix0 + dx
                ok = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)
                if not np.any(ok):
                    continue
                ixo, iyo = ix[ok], iy[ok]
                r = np.hypot(p[ok, 0] - grid.center[0] - axis[ixo], p[ok, 1] - grid.center[1] - axis[iyo])
                acc[ok] += coef[iyo, ixo] * basis.profile(r)
        out[lo:lo + chunk] = acc
    return out


# ══════════════════════════════════════════════════════════════════
# GRID PHANTOM
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class GridPhantomSpec:
    """Union of two perpendicular bar families inside a square of side ``extent``.

    Bars of one family are centred at u = j·pitch in the frame rotated by
    ``orientation`` about ``center``; the other family likewise in v.
    bar_width = pitch fills the square.
    """
    pitch: float
    bar_width: float
    extent: float
    amplitude: float = 1.0
    orientation: float = 0.0
    center: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not 0 < self.bar_width <= self.pitch:
            raise ValueError(f"need 0 < bar_width ≤ pitch, got bar_width={self.bar_width}, pitch={self.pitch}")
        if not self.pitch <= self.extent:
            raise ValueError(f"need pitch ≤ extent, got pitch={self.pitch}, extent={self.extent}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def half_span(self) -> float:
        """Half-width of the axis-aligned box enclosing the rotated square."""
        c, s = abs(math.cos(self.orientation)), abs(math.sin(self.orientation))
        return 0.5 * self.extent * (c + s)

    def rotated_coordinates(self, points) -> Tuple[np.ndarray, np.ndarray]:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        x, y = p[:, 0] - self.center[0], p[:, 1] - self.center[1]
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        return c * x + s * y, -s * x + c * y

    def indicator(self, points) -> np.ndarray:
        """True where a point lies on a bar of either family inside the square."""
        u, v = self.rotated_coordinates(points)
        tol = 1e-9 * self.pitch
        half_bar = 0.5 * self.bar_width + tol
        on_u = np.abs(u - self.pitch * np.rint(u / self.pitch)) <= half_bar
        on_v = np.abs(v - self.pitch * np.rint(v / self.pitch)) <= half_bar
        inside = (np.abs(u) <= 0.5 * self.extent + tol) & (np.abs(v) <= 0.5 * self.extent + tol)
        return inside & (on_u | on_v)

    def to_dict(self) -> dict:
        return {
            "pitch": self.pitch,
            "bar_width": self.bar_width,
            "extent": self.extent,
            "amplitude": self.amplitude,
            "orientation": self.orientation,
            "center": list(self.center),
        }


def rasterize_grid_phantom(spec: GridPhantomSpec, grid: ImageGrid) -> CoefficientImage:
    """Amplitude at nodes lying on a bar, zero elsewhere."""
    lim = 0.5 * grid.side + 1e-9 * grid.spacing
    off_x = abs(spec.center[0] - grid.center[0])
    off_y = abs(spec.center[1] - grid.center[1])
    if spec.half_span + max(off_x, off_y) > lim:
        raise ValueError(
            f"grid phantom spans ±{spec.half_span:.4g} mm but the image grid only ±{lim:.4g} mm"
        )
    nodes = grid.node_coordinates()
    on = spec.indicator(nodes) & grid.support_mask()
    coef = np.where(on, spec.amplitude, 0.0)
    if spec.amplitude < 0:
        log.warning("grid phantom amplitude %.4g is negative", spec.amplitude)
    log.debug("grid phantom: %d of %d nodes on bars", int(on.sum()), grid.num_nodes)
    return CoefficientImage(grid, coef)


# ══════════════════════════════════════════════════════════════════
# RANDOM BAND-LIMITED PHANTOM
# ══════════════════════════════════════════════════════════════════

def lattice_frequencies(grid: ImageGrid) -> np.ndarray:
    """|ξ| on the n×n DFT lattice of the coefficient grid, in rad/mm."""
    n, h = grid.samples_per_axis, grid.spacing
    k = 2.0 * math.pi * np.fft.fftfreq(n, d=h)
    ky, kx = np.meshgrid(k, k, indexing="ij")
    return np.hypot(kx, ky)


def _out_of_band_share(grid: ImageGrid, coef: np.ndarray, Omega: float) -> float:
    return 1.0 - spectral_energy_fraction(CoefficientImage(grid, coef), Omega)


def _concentrated_mix(grid: ImageGrid, Omega: float, rng: np.random.Generator) -> np.ndarray:
    """Random combination of the support-limited modes that keep ≥ 1 − tol/2 in band.

    The band projector is a circular convolution on the lattice, so its
    restriction to the support nodes is a dense symmetric matrix T. For
    orthonormal eigenvectors v_i of T with eigenvalues λ_i, the in-band share
    of Σ c_i v_i is Σ c_i² λ_i / Σ c_i², hence the leak bound carries over to
    any combination.
    """
    support = np.flatnonzero(grid.support_mask())
    if len(support) > CONCENTRATION_MAX_NODES:
        raise DegenerateInputError(
            f"band limit Ω = {Omega:.4g} not reached by the taper and {len(support)} support nodes "
            f"exceed {CONCENTRATION_MAX_NODES} for the dense fallback"
        )
    n = grid.samples_per_axis
    band = (lattice_frequencies(grid) <= Omega).astype(np.float64)
    kernel = np.real(np.fft.ifft2(band))
    iy, ix = np.divmod(support, n)
    T = kernel[(iy[:, None] - iy[None, :]) % n, (ix[:, None] - ix[None, :]) % n]
    vals, vecs = linalg.eigh(0.5 * (T + T.T))
    keep = vals >= 1.0 - 0.5 * BAND_LEAK_TOL
    if not np.any(keep):
        raise DegenerateInputError(
            f"no object supported in R0 = {grid.R0:.4g} keeps more than {vals[-1]:.6f} of its "
            f"energy inside Ω = {Omega:.4g}; widen the support or raise Ω"
        )
    log.debug("random phantom: mixing %d of %d concentrated modes", int(keep.sum()), len(support))
    coef = np.zeros(grid.num_nodes)
    coef[support] = vecs[:, keep] @ rng.standard_normal(int(keep.sum()))
    return coef


def random_bandlimited_phantom(grid: ImageGrid, Omega: float, seed: int) -> CoefficientImage:
    """Deterministic random object with lattice spectrum inside |ξ| ≤ Ω and support in R0.

    i.i.d. normal coefficients are ideally low-passed at Ω − margin, then
    multiplied by a Gaussian taper of std σ_w = R0/4 truncated at R0. The
    margin TAPER_MARGIN/σ_w absorbs the spectral spread of the taper. When
    R0·Ω is too small for that, the out-of-band share exceeds BAND_LEAK_TOL
    and the object is drawn from the best-concentrated modes instead.

    Raises DegenerateInputError when no object on the support meets the bound.
    """
    if not Omega > 0:
        raise ValueError(f"Omega must be > 0, got {Omega}")
    rng = np.random.default_rng(seed)
    n = grid.samples_per_axis
    noise = rng.standard_normal((n, n))

    R0 = grid.R0
    width = TAPER_FRACTION * R0
    cutoff = max(Omega - TAPER_MARGIN / width, 0.25 * Omega)

    spec = np.fft.fft2(noise)
    spec[lattice_frequencies(grid) > cutoff] = 0.0
    smooth = np.real(np.fft.ifft2(spec))

    nodes = grid.node_coordinates()
    r = np.hypot(nodes[:, 0] - grid.center[0], nodes[:, 1] - grid.center[1])
    taper = np.exp(-0.5 * (r / width) ** 2)
    taper[~grid.support_mask()] = 0.0
    coef = smooth.ravel() * taper

    leak = _out_of_band_share(grid, coef, Omega)
    if leak >= BAND_LEAK_TOL:
        log.info("tapered noise leaks %.3g outside Ω at R0·Ω = %.3g; using concentrated modes", leak, R0 * Omega)
        coef = _concentrated_mix(grid, Omega, rng)

    peak = np.max(np.abs(coef))
    if peak > 0:
        coef = coef / peak
    return CoefficientImage(grid, coef)


def spectral_energy_fraction(x: CoefficientImage, Omega: float) -> float:
    """Share of lattice DFT energy at |ξ| ≤ Ω."""
    power = np.abs(np.fft.fft2(x.as_array())) ** 2
    total = power.sum()
    if total == 0:
        return 1.0
    return float(power[lattice_frequencies(x.grid) <= Omega].sum() / total)


def disc_phantom(grid: ImageGrid, radius: float, center=(0.0, 0.0), amplitude: float = 1.0) -> CoefficientImage:
    nodes = grid.node_coordinates()
    inside = np.hypot(nodes[:, 0] - center[0], nodes[:, 1] - center[1]) <= radius
    return CoefficientImage(grid, np.where(inside & grid.support_mask(), amplitude, 0.0))


def point_phantom(grid: ImageGrid, index: int, amplitude: float = 1.0) -> CoefficientImage:
    coef = np.zeros(grid.num_nodes)
    coef[index] = amplitude
    return CoefficientImage(grid, coef)


def nearest_node(grid: ImageGrid, point) -> int:
    nodes = grid.node_coordinates()
    return int(np.argmin(np.hypot(nodes[:, 0] - point[0], nodes[:, 1] - point[1])))
