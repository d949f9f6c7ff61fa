"""
sampling_analysis.py — Nyquist bookkeeping and stability probes for a PAT setup.

compute_report compares the temporal, spatial and angular steps of a setup
with the Nyquist steps of a bandwidth Ω on a support disc of radius R0:

    h_t ≤ π/Ω        h_x ≤ π/Ω        h_θ ≤ π/(R0·Ω)

probe_stability estimates the extreme singular values of the sampled
operator S∘φ_Ω∘W restricted to B_{R0,Ω}, the span of lattice functions
concentrated both in the disc and in the band. nyquist_sweep repeats the
probe and a Tikhonov reconstruction over a range of angular steps.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator

from bandlimit_filter import FilterSpec, check_representable, filter_traces, filter_traces_adjoint
from geometry_types import (
    CoefficientImage,
    ImageGrid,
    SensorGeometry,
    TimeGrid,
)
from phantom import BumpBasis, random_bandlimited_phantom
from recon import TikhonovConfig, solve_tikhonov
from wave_forward import ForwardOperator, build_forward

log = logging.getLogger(__name__)

# Eigenvalue of the concentration operator above which a vector counts as
# belonging to B_{R0,Ω}.
CONCENTRATION_THRESHOLD = 0.5
MIN_PROBES = 10
_OK_RTOL = 1e-9


# ══════════════════════════════════════════════════════════════════
# SAMPLING REPORT
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class SamplingReport:
    bandwidth: float
    support_radius: float
    h_t: float
    h_x: float
    h_theta: float
    nyquist_h_t: float
    nyquist_h_x: float
    nyquist_h_theta: float
    resolved_disc_radius: float
    undersampling_factor_angular: float
    temporal_ok: bool
    spatial_ok: bool
    angular_ok: bool

    @property
    def all_ok(self) -> bool:
        return self.temporal_ok and self.spatial_ok and self.angular_ok

    def to_dict(self) -> dict:
        return asdict(self)


def compute_report(
    geom: SensorGeometry,
    igrid: ImageGrid,
    tgrid: TimeGrid,
    Omega: float,
    R0: Optional[float] = None,
) -> SamplingReport:
    """Nyquist steps, actual steps and the angularly resolved disc radius."""
    if not Omega > 0:
        raise ValueError(f"Omega must be > 0, got {Omega}")
    R0 = igrid.R0 if R0 is None else float(R0)
    if not R0 > 0:
        raise ValueError(f"support radius must be > 0, got {R0}")

    nyq = math.pi / Omega
    nyq_theta = math.pi / (R0 * Omega)
    h_t, h_x, h_theta = tgrid.step, igrid.spacing, geom.angular_step

    # On a spatially critical grid the resolved radius is the node count per angular step.
    if math.isclose(h_x, nyq, rel_tol=_OK_RTOL):
        resolved = h_x / h_theta
    else:
        resolved = math.pi / (Omega * h_theta)

    report = SamplingReport(
        bandwidth=float(Omega),
        support_radius=R0,
        h_t=h_t,
        h_x=h_x,
        h_theta=h_theta,
        nyquist_h_t=nyq,
        nyquist_h_x=nyq,
        nyquist_h_theta=nyq_theta,
        resolved_disc_radius=resolved,
        undersampling_factor_angular=h_theta / nyq_theta,
        temporal_ok=h_t <= nyq * (1 + _OK_RTOL),
        spatial_ok=h_x <= nyq * (1 + _OK_RTOL),
        angular_ok=h_theta <= nyq_theta * (1 + _OK_RTOL),
    )
    if not report.angular_ok:
        log.warning(
            "angular sampling %.3g× coarser than Nyquist; only a disc of radius %.3g mm is resolved",
            report.undersampling_factor_angular, resolved,
        )
    return report


# ══════════════════════════════════════════════════════════════════
# BAND-LIMITED SUBSPACE
# ══════════════════════════════════════════════════════════════════

class ConcentrationOperator:
    """T = P·L·P on flat coefficient vectors (columns of an (N, k) block).

    P zeroes nodes farther than R0 from the grid centre; L is the ideal
    low-pass at Ω on the ×2 zero-padded lattice. T is symmetric with
    spectrum in [0, 1].
    """

    def __init__(self, grid: ImageGrid, R0: float, Omega: float):
        self.n = grid.samples_per_axis
        nodes = grid.node_coordinates()
        dist = np.hypot(nodes[:, 0] - grid.center[0], nodes[:, 1] - grid.center[1])
        self.mask = (dist <= R0).astype(np.float64)
        k = 2.0 * math.pi * np.fft.fftfreq(2 * self.n, d=grid.spacing)
        ky, kx = np.meshgrid(k, k, indexing="ij")
        self.passband = (np.hypot(kx, ky) <= Omega).astype(np.float64)

    def __call__(self, V: np.ndarray) -> np.ndarray:
        n = self.n
        V = np.asarray(V, dtype=np.float64)
        cols = V.shape[1]
        padded = np.zeros((cols, 2 * n, 2 * n))
        padded[:, :n, :n] = (V * self.mask[:, None]).T.reshape(cols, n, n)
        out = np.real(np.fft.ifft2(np.fft.fft2(padded, axes=(-2, -1)) * self.passband, axes=(-2, -1)))
        return out[:, :n, :n].reshape(cols, -1).T * self.mask[:, None]


def _concentrated(Q: np.ndarray, TQ: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rayleigh–Ritz on span(Q); returns (Ritz values, Ritz vectors) above the threshold."""
    B = Q.T @ TQ
    vals, W = linalg.eigh(0.5 * (B + B.T))
    order = np.argsort(vals)[::-1]
    vals, W = vals[order], W[:, order]
    keep = vals >= CONCENTRATION_THRESHOLD
    return vals[keep], Q @ W[:, keep]


def bandlimited_subspace(
    grid: ImageGrid,
    R0: float,
    Omega: float,
    num_probes: int,
    seed: int,
    power_iters: int = 2,
) -> np.ndarray:
    """Orthonormal basis (N, k) of B_{R0,Ω} by randomized subspace iteration."""
    T = ConcentrationOperator(grid, R0, Omega)
    N = grid.num_nodes
    if not T.mask.any():
        log.warning("no node lies within R0 = %.4g of the grid centre", R0)
        return np.zeros((N, 0))
    p = min(num_probes, N)
    rng = np.random.default_rng(seed)
    Q, _ = linalg.qr(T(rng.standard_normal((N, p))), mode="economic")
    for _ in range(power_iters):
        Q, _ = linalg.qr(T(Q), mode="economic")
    vals, V = _concentrated(Q, T(Q))
    if vals.size == p:
        log.warning("all %d probes are concentrated; B_{R0,Ω} may be larger, raise num_probes", p)
    log.info("band-limited subspace: dimension %d from %d probes", vals.size, p)
    return V


def dense_bandlimited_subspace(grid: ImageGrid, R0: float, Omega: float) -> np.ndarray:
    """Exact B_{R0,Ω} from the full eigendecomposition of T; small grids only."""
    T = ConcentrationOperator(grid, R0, Omega)
    Q = np.eye(grid.num_nodes)
    _, V = _concentrated(Q, T(Q))
    return V


# ══════════════════════════════════════════════════════════════════
# STABILITY PROBES
# ══════════════════════════════════════════════════════════════════

def sampled_operator(
    op: ForwardOperator,
    filter_spec: Optional[FilterSpec] = None,
    sensor_stride: int = 1,
    time_stride: int = 1,
) -> LinearOperator:
    """S∘φ∘W as a LinearOperator: filter on the operator's time grid, then decimate."""
    if sensor_stride < 1 or time_stride < 1:
        raise ValueError("strides must be ≥ 1")
    m, nt = op.data_shape
    step = op.time_grid.step
    if filter_spec is not None:
        check_representable(filter_spec, step, "time grid")
    ms, ns = len(range(0, m, sensor_stride)), len(range(0, nt, time_stride))

    def forward(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        V = v.reshape(-1, 1) if v.ndim == 1 else v
        d = np.moveaxis(op.matvec(V).reshape(m, nt, -1), 2, 0)
        if filter_spec is not None:
            d = filter_traces(d, step, filter_spec)
        out = d[:, ::sensor_stride, ::time_stride].reshape(V.shape[1], -1).T
        return out[:, 0] if v.ndim == 1 else out

    def adjoint(w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        Wm = w.reshape(-1, 1) if w.ndim == 1 else w
        k = Wm.shape[1]
        full = np.zeros((k, m, nt))
        full[:, ::sensor_stride, ::time_stride] = np.moveaxis(Wm.reshape(ms, ns, k), 2, 0)
        if filter_spec is not None:
            full = filter_traces_adjoint(full, step, filter_spec)
        out = op.rmatvec(full.reshape(k, -1).T)
        return out[:, 0] if w.ndim == 1 else out

    return LinearOperator(
        shape=(ms * ns, op.image_grid.num_nodes), dtype=np.float64,
        matvec=forward, rmatvec=adjoint, matmat=forward, rmatmat=adjoint,
    )


def probe_stability(
    op: ForwardOperator,
    R0: float,
    Omega: float,
    num_probes: int,
    seed: int,
    *,
    filter_spec: Optional[FilterSpec] = None,
    sensor_stride: int = 1,
    time_stride: int = 1,
    power_iters: int = 2,
    subspace: Optional[np.ndarray] = None,
) -> Tuple[float, float]:
    """(σ_min, σ_max) of S∘φ_Ω∘W on B_{R0,Ω}.

    φ_Ω defaults to the ideal low-pass at Ω, so the probe isolates the
    sampling from the roll-off of a Gaussian response. ``subspace`` replaces
    the randomized basis, e.g. with dense_bandlimited_subspace.
    """
    if num_probes < MIN_PROBES:
        raise ValueError(f"num_probes must be ≥ {MIN_PROBES}, got {num_probes}")
    spec = FilterSpec(Omega, kind="ideal") if filter_spec is None else filter_spec
    V = subspace if subspace is not None else bandlimited_subspace(
        op.image_grid, R0, Omega, num_probes, seed, power_iters
    )
    k = V.shape[1]
    if k == 0:
        log.warning("B_{R0,Ω} is empty; reporting σ = 0")
        return 0.0, 0.0

    A = sampled_operator(op, spec, sensor_stride, time_stride)
    Y = A.matmat(V)
    s = linalg.svd(Y, compute_uv=False)
    if k > Y.shape[0]:
        log.warning("subspace dimension %d exceeds data dimension %d; σ_min = 0", k, Y.shape[0])
        sigma_min = 0.0
    else:
        sigma_min = float(s[-1])
    sigma_max = float(s[0])
    log.info("stability probe: dim %d, σ_min %.4g, σ_max %.4g", k, sigma_min, sigma_max)
    return sigma_min, sigma_max


# ══════════════════════════════════════════════════════════════════
# NYQUIST SWEEP
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class SweepRow:
    factor: float
    h_theta: float
    sigma_min: float
    sigma_max: float
    cond: float
    recon_rel_err: float


def angular_builder(
    radius: float,
    tgrid: TimeGrid,
    igrid: ImageGrid,
    basis: BumpBasis,
    **build_kwargs,
) -> Callable[[float], ForwardOperator]:
    """Full-circle operator factory: h_θ ↦ W with M = round(2π/h_θ) sensors."""
    def build(h_theta: float) -> ForwardOperator:
        m = max(1, int(round(2.0 * math.pi / h_theta)))
        return build_forward(SensorGeometry(radius=radius, num_sensors=m), tgrid, igrid, basis, **build_kwargs)
    return build


def nyquist_sweep(
    builder: Callable[[float], ForwardOperator],
    Omega: float,
    R0: float,
    theta_factors: Sequence[float],
    *,
    num_probes: int = 64,
    seed: int = 0,
    filter_spec: Optional[FilterSpec] = None,
    time_stride: int = 1,
    relative_lambda: float = 1e-4,
    phantom: Optional[CoefficientImage] = None,
) -> List[SweepRow]:
    """Stability and reconstruction error for h_θ = factor·π/(R0·Ω).

    Each row reconstructs a band-limited object supported in R0 from its
    sampled data with λ = relative_lambda·σ_max².
    """
    if not theta_factors:
        raise ValueError("theta_factors must not be empty")
    spec = FilterSpec(Omega, kind="ideal") if filter_spec is None else filter_spec
    nyq = math.pi / (R0 * Omega)
    rows: List[SweepRow] = []
    for factor in theta_factors:
        op = builder(factor * nyq)
        sig_min, sig_max = probe_stability(
            op, R0, Omega, num_probes, seed, filter_spec=spec, time_stride=time_stride,
        )
        truth = phantom
        if truth is None:
            g = op.image_grid
            disc = ImageGrid(g.spacing, g.samples_per_axis, g.center, support_radius=R0)
            truth = CoefficientImage(g, random_bandlimited_phantom(disc, Omega, seed).coefficients)
        A = sampled_operator(op, spec, 1, time_stride)
        data = A.matvec(truth.coefficients)
        sol = solve_tikhonov(A, data, TikhonovConfig(lam=relative_lambda * sig_max ** 2))
        err = float(np.linalg.norm(sol.x - truth.coefficients) / truth.norm())
        cond = sig_max / sig_min if sig_min > 0 else math.inf
        rows.append(SweepRow(float(factor), op.geometry.angular_step, sig_min, sig_max, cond, err))
        log.info("sweep factor %.3g: M=%d cond %.3g recon error %.4f", factor, op.geometry.num_sensors, cond, err)
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    fields = ["factor", "h_theta", "sigma_min", "sigma_max", "cond", "recon_rel_err"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(fields)
        for r in rows:
            w.writerow([repr(getattr(r, k)) for k in fields])
