"""
bandlimit_filter.py — Detector IRF φ_Ω, spatial PSF Φ_Ω and resolution constants.

Both filters share one radial transfer function H(ω) with H(0) = 1:
  gaussian  H(ω) = exp(−ω²/(2σ²)), σ = Ω/√(−2 ln attenuation), so H(Ω) = attenuation
  ideal     H(ω) = 1 for |ω| ≤ Ω, else 0

filter_sinogram convolves every trace in time, apply_psf convolves the
coefficient lattice in space; both refuse a Gaussian whose H is not negligible
at the grid Nyquist frequency. An ideal cut above Nyquist passes the whole grid
band unchanged. The a-resolved constant of a subspace is the
smallest generalized eigenvalue of (filtered Gram, plain Gram).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from geometry_types import (
    AliasingError,
    CoefficientImage,
    DegenerateInputError,
    GridMismatchError,
    SensorGeometry,
    Sinogram,
    decimate_geometry,
)
from phantom import BumpBasis
from wave_forward import ForwardOperator, apply, build_forward

log = logging.getLogger(__name__)

FILTER_KINDS = ("gaussian", "ideal")
# Transfer value that counts as "negligible" at the Nyquist frequency.
NYQUIST_LEAK = 1e-6
# Relative eigenvalue floor of a Gram matrix below which a basis is rank deficient.
RANK_TOL = 1e-12
# Zero-padding factor of the lattice DFT used for subspace Gram matrices.
GRAM_PAD = 4


@dataclass(frozen=True)
class FilterSpec:
    bandwidth: float
    kind: str = "gaussian"
    attenuation: float = 0.01

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"filter kind must be one of {FILTER_KINDS}, got {self.kind!r}")
        if not 0 < self.attenuation < 1:
            raise ValueError(f"attenuation must lie in (0, 1), got {self.attenuation}")

    @property
    def sigma(self) -> float:
        return self.bandwidth / math.sqrt(-2.0 * math.log(self.attenuation))

    def transfer(self, omega) -> np.ndarray:
        w = np.abs(np.asarray(omega, dtype=np.float64))
        if self.kind == "ideal":
            return (w <= self.bandwidth).astype(np.float64)
        return np.exp(-0.5 * (w / self.sigma) ** 2)

    def to_dict(self) -> dict:
        return {"bandwidth": self.bandwidth, "kind": self.kind, "attenuation": self.attenuation}


def check_representable(spec: FilterSpec, step: float, what: str) -> None:
    """Raise AliasingError unless a Gaussian H(π/step) is negligible.

    Ideal filters never alias: below Nyquist they cut exactly, above it they
    are the identity on the grid.
    """
    if spec.kind == "ideal":
        return
    nyquist = math.pi / step
    if not float(spec.transfer(nyquist)) < NYQUIST_LEAK:
        raise AliasingError(
            f"{spec.kind} filter with Ω={spec.bandwidth:.4g} is not representable on the {what} "
            f"(step {step:.4g}, Nyquist {nyquist:.4g}); refine the grid"
        )


# ══════════════════════════════════════════════════════════════════
# TEMPORAL FILTER
# ══════════════════════════════════════════════════════════════════

def filter_traces(data: np.ndarray, step: float, spec: FilterSpec) -> np.ndarray:
    """φ_Ω ∗_t on the rows of ``data`` with symmetric padding on both ends."""
    check_representable(spec, step, "time grid")
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[-1]
    padded = np.pad(data, [(0, 0)] * (data.ndim - 1) + [(n, n)], mode="symmetric")
    L = padded.shape[-1]
    omega = 2.0 * math.pi * np.fft.rfftfreq(L, d=step)
    spec_rows = np.fft.rfft(padded, axis=-1) * spec.transfer(omega)
    return np.fft.irfft(spec_rows, n=L, axis=-1)[..., n:2 * n]


def filter_traces_adjoint(data: np.ndarray, step: float, spec: FilterSpec) -> np.ndarray:
    """Transpose of filter_traces: embed, convolve, fold the mirrored pads back."""
    check_representable(spec, step, "time grid")
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[-1]
    embedded = np.pad(data, [(0, 0)] * (data.ndim - 1) + [(n, n)], mode="constant")
    L = embedded.shape[-1]
    omega = 2.0 * math.pi * np.fft.rfftfreq(L, d=step)
    z = np.fft.irfft(np.fft.rfft(embedded, axis=-1) * spec.transfer(omega), n=L, axis=-1)
    return z[..., n:2 * n] + z[..., n - 1::-1] + z[..., :2 * n - 1:-1]


def filter_sinogram(g: Sinogram, spec: FilterSpec) -> Sinogram:
    """Per-sensor temporal convolution with φ_Ω; DC gain 1."""
    return g.with_data(filter_traces(g.data, g.time_grid.step, spec))


def decimate_sinogram(g: Sinogram, time_factor: int = 1, sensor_factor: int = 1) -> Sinogram:
    """Keep every time_factor-th sample and every sensor_factor-th sensor."""
    geom = decimate_geometry(g.geometry, sensor_factor)
    return Sinogram(geom, g.time_grid.decimate(time_factor), g.data[::sensor_factor, ::time_factor])


# ══════════════════════════════════════════════════════════════════
# SPATIAL PSF
# ══════════════════════════════════════════════════════════════════

def apply_psf(x: CoefficientImage, spec: FilterSpec) -> CoefficientImage:
    """Φ_Ω ∗ on the coefficient lattice: 2D DFT with ×2 zero padding, multiply by H(‖ξ‖)."""
    grid = x.grid
    check_representable(spec, grid.spacing, "image grid")
    n, h = grid.samples_per_axis, grid.spacing
    padded = np.zeros((2 * n, 2 * n))
    padded[:n, :n] = x.as_array()
    k = 2.0 * math.pi * np.fft.fftfreq(2 * n, d=h)
    ky, kx = np.meshgrid(k, k, indexing="ij")
    out = np.real(np.fft.ifft2(np.fft.fft2(padded) * spec.transfer(np.hypot(kx, ky))))
    return CoefficientImage.from_array(grid, out[:n, :n])


def verify_convolution_identity(op: ForwardOperator, spec: FilterSpec, x: CoefficientImage) -> float:
    """‖φ∗W x − W(Φ∗x)‖ / ‖φ∗W x‖, compared inside the lattice band.

    Data content above π/h_x stems from the bump basis replicas, which a
    lattice PSF cannot act on, so both sides are restricted to |ω| ≤ π/h_x.
    A Gaussian φ_Ω is negligible there anyway; an ideal φ_Ω above the lattice
    band turns both sides into the same band-limited W x.
    """
    lattice_band = FilterSpec(math.pi / op.image_grid.spacing, kind="ideal")
    lhs = filter_sinogram(filter_sinogram(apply(op, x), spec), lattice_band)
    denom = lhs.norm()
    if denom == 0:
        raise DegenerateInputError("convolution identity undefined for a zero phantom")
    rhs = filter_sinogram(apply(op, apply_psf(x, spec)), lattice_band)
    err = float(np.linalg.norm(lhs.data - rhs.data) / denom)
    log.info("convolution identity: relative error %.3e", err)
    return err


# ══════════════════════════════════════════════════════════════════
# RESOLUTION CONSTANTS
# ══════════════════════════════════════════════════════════════════

def _min_rayleigh(plain: np.ndarray, filtered: np.ndarray) -> float:
    """Smallest λ of filtered·v = λ·plain·v, clipped to [0, 1]."""
    plain = 0.5 * (plain + plain.T)
    filtered = 0.5 * (filtered + filtered.T)
    ev = linalg.eigvalsh(plain)
    if ev[0] <= RANK_TOL * max(ev[-1], 0.0) or ev[-1] <= 0:
        raise DegenerateInputError("subspace basis is rank deficient")
    lam = linalg.eigh(filtered, plain, eigvals_only=True)
    return float(np.clip(lam[0], 0.0, 1.0))


def estimate_resolution_constant(
    subspace_basis: Sequence[CoefficientImage],
    spec: FilterSpec,
    basis: Optional[BumpBasis] = None,
) -> float:
    """min over the span of ‖Φ_Ω∗f‖²/‖f‖² by Parseval on a zero-padded lattice DFT.

    With ``basis`` given, each frequency is weighted by |û(‖ξ‖)|² so the
    norms are those of the synthesized functions within the lattice band.
    """
    if not subspace_basis:
        raise DegenerateInputError("empty subspace basis")
    grid = subspace_basis[0].grid
    for b in subspace_basis[1:]:
        if b.grid != grid:
            raise GridMismatchError("subspace basis vectors live on different grids")
    size = GRAM_PAD * grid.samples_per_axis
    axis_k = 2.0 * math.pi * np.fft.fftfreq(size, d=grid.spacing)
    ky, kx = np.meshgrid(axis_k, axis_k, indexing="ij")
    k = np.hypot(kx, ky).ravel()
    weight = np.ones_like(k) if basis is None else basis.fourier_transform(k) ** 2
    spectra = np.stack([np.fft.fft2(b.as_array(), s=(size, size)).ravel() for b in subspace_basis], axis=1)
    weighted = spectra * np.sqrt(weight)[:, None]
    gain = spec.transfer(k)[:, None]
    plain = np.real(weighted.conj().T @ weighted)
    filtered = np.real((gain * weighted).conj().T @ (gain * weighted))
    return _min_rayleigh(plain, filtered)


def dense_angle_operator(op: ForwardOperator, angular_density: int = 8, time_density: Optional[int] = None) -> ForwardOperator:
    """Full-circle array with ``angular_density``× the sensors and h_t ≤ h_x/4."""
    g = op.geometry
    geom = SensorGeometry(
        radius=g.radius,
        num_sensors=max(angular_density * g.num_sensors, 8),
        start_angle=g.start_angle,
        sound_speed=g.sound_speed,
    )
    if time_density is None:
        time_density = max(1, int(math.ceil(op.time_grid.step / (op.image_grid.spacing / 4) - 1e-9)))
    tgrid = op.time_grid.refine(time_density)
    return build_forward(
        geom, tgrid, op.image_grid, op.basis,
        radial_oversampling=max(1, int(round(op.basis.spacing / (op.radii[1] - op.radii[0])))),
        normalization=op.normalization, workers=op.workers,
    )


def verify_resolution_theorem(
    op: ForwardOperator,
    subspace_basis: Sequence[CoefficientImage],
    spec: FilterSpec,
    angular_density: int = 8,
) -> Tuple[float, float]:
    """(a_image, a_data) for one subspace.

    a_data is the minimum of ‖φ_Ω∗_t g‖²/‖g‖² over g ∈ W(span), with norms
    taken on a dense full-circle array and a fine time grid.
    """
    a_image = estimate_resolution_constant(subspace_basis, spec, basis=op.basis)
    dense = dense_angle_operator(op, angular_density)
    traces = np.stack([dense.matvec(b.coefficients) for b in subspace_basis], axis=1)
    m, nt = dense.data_shape
    filtered = filter_traces(traces.T.reshape(-1, m, nt), dense.time_grid.step, spec)
    filtered = filtered.reshape(len(subspace_basis), -1).T
    a_data = _min_rayleigh(traces.T @ traces, filtered.T @ filtered)
    log.info("resolution constants: image %.4g, data %.4g", a_image, a_data)
    return a_image, a_data
