"""
wave_forward.py — Forward operator W, its exact adjoint, and an FDTD oracle.

The 2D initial-value problem p(·,0) = f, ∂_t p(·,0) = 0 (c = 1) is solved by

    p(s, t) = ∂_t ∫_0^t r·M(s, r)/√(t² − r²) dr

with M(s, r) the mean of f over the circle of radius r about s. The
operator factors as W = K ∘ C:

  C  sparse circular means of every bump on a radial lattice of step
     h_x/radial_oversampling (each bump only touches |r − d| < h_x)
  K  dense time kernel: product integration of the formula above for a
     piecewise-linear M, evaluated in closed form

so apply is ``(C x) Kᵀ`` and apply_adjoint is ``Cᵀ (g K)``, an exact
transpose pair. In 2D the response of a compact source has a decaying tail
after t = d + h_x; only the lower edge t = d − h_x is a hard zero.

Sensor blocks are processed by a thread pool with a block partition that
does not depend on the worker count, so results are bitwise reproducible.

The FDTD solver (leapfrog, five-point Laplacian, quadratic sponge) is an
independent validation oracle only.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import integrate, sparse
from scipy.sparse.linalg import LinearOperator

from geometry_types import (
    CoefficientImage,
    DegenerateInputError,
    GridMismatchError,
    ImageGrid,
    SensorGeometry,
    Sinogram,
    StabilityError,
    TimeGrid,
    TimeWindowError,
    check_same_grid,
    sensor_positions,
    time_window_for,
)
from phantom import BumpBasis, point_phantom, synthesize

log = logging.getLogger(__name__)

RADIAL_OVERSAMPLING = 8
SENSORS_PER_BLOCK = 8
MAX_CFL = 1.0 / math.sqrt(2.0)


# ══════════════════════════════════════════════════════════════════
# TIME KERNEL
# ══════════════════════════════════════════════════════════════════

def _segment_integrals(t: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """∫ r/√(t²−r²) and ∫ r²/√(t²−r²) over [lo, min(hi, t)], zero where t ≤ lo.

    t is (N_t, 1); lo, hi are (1, S).
    """
    live = t > lo
    b = np.minimum(hi, t)
    tt = t * t
    sa = np.sqrt(np.clip(tt - lo * lo, 0.0, None))
    sb = np.sqrt(np.clip(tt - b * b, 0.0, None))
    denom = sa + sb
    with np.errstate(divide="ignore", invalid="ignore"):
        i1 = np.where(denom > 0, (b * b - lo * lo) / np.where(denom > 0, denom, 1.0), 0.0)
    dasin = np.arctan2(b * sa - lo * sb, sb * sa + lo * b)
    i2 = 0.5 * tt * dasin - 0.5 * (b * sb - lo * sa)
    return np.where(live, i1, 0.0), np.where(live, i2, 0.0)


def time_kernel(times: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """K[j, i] = p(t_j) produced by the hat function centred at radii[i].

    On a segment where M = a + b·r the pressure contribution is
    (1/t)·(a·I1 + 2b·I2) with I1, I2 from _segment_integrals.
    """
    t = np.asarray(times, dtype=np.float64)[:, None]
    r = np.asarray(radii, dtype=np.float64)
    n_r = r.size
    K = np.zeros((t.shape[0], n_r))
    if n_r < 2:
        return K
    dr = r[1] - r[0]
    s1, s2 = _segment_integrals(t, r[None, :-1], r[None, 1:])
    # rising half of hat i on segment i−1, falling half on segment i
    K[:, 1:] += (-r[None, :-1] / dr) * s1 + (2.0 / dr) * s2
    K[:, :-1] += (r[None, 1:] / dr) * s1 - (2.0 / dr) * s2
    with np.errstate(divide="ignore", invalid="ignore"):
        K = np.where(t > 0, K / np.where(t > 0, t, 1.0), 0.0)
    return K


# ══════════════════════════════════════════════════════════════════
# FORWARD OPERATOR
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class ForwardOperator:
    """Matrix-free W on one (geometry, time grid, image grid, basis) quadruple.

    Columns are the nodes inside the grid's support disc; other coefficients
    are ignored by apply and receive zeros from apply_adjoint.
    """
    geometry: SensorGeometry
    time_grid: TimeGrid
    image_grid: ImageGrid
    basis: BumpBasis
    radii: np.ndarray = field(repr=False)
    time_kernel: np.ndarray = field(repr=False)
    mean_blocks: Tuple[sparse.csr_matrix, ...] = field(repr=False)
    block_bounds: Tuple[Tuple[int, int], ...] = field(repr=False)
    active: np.ndarray = field(repr=False)
    normalization: float = 1.0
    workers: int = 1

    @property
    def num_active(self) -> int:
        return int(self.active.sum())

    @property
    def data_shape(self) -> Tuple[int, int]:
        return self.geometry.num_sensors, self.time_grid.num_samples

    @property
    def shape(self) -> Tuple[int, int]:
        m, nt = self.data_shape
        return m * nt, self.image_grid.num_nodes

    @property
    def kernel_table(self) -> np.ndarray:
        """Time kernel sampled on (time, radius); linear interpolation in radius."""
        return self.time_kernel

    def with_normalization(self, scale: float) -> "ForwardOperator":
        return replace(self, normalization=float(scale))

    def with_workers(self, workers: int) -> "ForwardOperator":
        return replace(self, workers=max(1, int(workers)))

    # ── Block kernels ──────────────────────────────────────────────

    def _run_blocks(self, fn: Callable[[int], np.ndarray]) -> List[np.ndarray]:
        idx = range(len(self.mean_blocks))
        if self.workers > 1 and len(self.mean_blocks) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, idx))
        return [fn(b) for b in idx]

    def _forward_active(self, xa: np.ndarray) -> np.ndarray:
        """xa is (n_active,) or (n_active, k); returns (M, N_t) or (M, N_t, k)."""
        n_r = self.radii.size
        K = self.time_kernel

        def block(b: int) -> np.ndarray:
            lo, hi = self.block_bounds[b]
            means = self.mean_blocks[b] @ xa
            if xa.ndim == 1:
                return means.reshape(hi - lo, n_r) @ K.T
            return np.einsum("mrk,tr->mtk", means.reshape(hi - lo, n_r, -1), K)

        out = np.concatenate(self._run_blocks(block), axis=0)
        return self.normalization * out

    def _adjoint_active(self, g: np.ndarray) -> np.ndarray:
        """g is (M, N_t) or (M, N_t, k); returns (n_active,) or (n_active, k)."""
        K = self.time_kernel

        def block(b: int) -> np.ndarray:
            lo, hi = self.block_bounds[b]
            gb = g[lo:hi]
            if gb.ndim == 2:
                return self.mean_blocks[b].T @ (gb @ K).ravel()
            proj = np.einsum("mtk,tr->mrk", gb, K)
            return self.mean_blocks[b].T @ proj.reshape(-1, proj.shape[-1])

        parts = self._run_blocks(block)
        total = parts[0].copy()
        for p in parts[1:]:
            total += p
        return self.normalization * total

    # ── Flat-vector interface ──────────────────────────────────────

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        xa = v[self.active] if v.ndim == 1 else v[self.active, :]
        out = self._forward_active(xa)
        return out.reshape(-1) if v.ndim == 1 else out.reshape(-1, v.shape[1])

    def rmatvec(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        m, nt = self.data_shape
        n = self.image_grid.num_nodes
        if w.ndim == 1:
            out = np.zeros(n)
            out[self.active] = self._adjoint_active(w.reshape(m, nt))
        else:
            out = np.zeros((n, w.shape[1]))
            out[self.active, :] = self._adjoint_active(w.reshape(m, nt, -1))
        return out

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(
            shape=self.shape, dtype=np.float64,
            matvec=self.matvec, rmatvec=self.rmatvec,
            matmat=self.matvec, rmatmat=self.rmatvec,
        )

    def bump_response(self, distance: float) -> np.ndarray:
        """Trace q(d, t_j) of one bump at distance d, from the stored lattice."""
        means = self.basis.circular_mean(distance, self.radii)
        return self.normalization * (self.time_kernel @ means)


def _mean_block(
    sensors: np.ndarray, nodes: np.ndarray, basis: BumpBasis, r0: float, dr: float, n_r: int, ovs: int,
) -> sparse.csr_matrix:
    h = basis.spacing
    n_nodes = nodes.shape[0]
    offsets = np.arange(2 * ovs + 2)
    rows, cols, vals = [], [], []
    for m, s in enumerate(sensors):
        d = np.hypot(nodes[:, 0] - s[0], nodes[:, 1] - s[1])
        first = np.floor((d - h - r0) / dr).astype(np.int64) + 1
        idx = first[:, None] + offsets[None, :]
        ok = (idx >= 0) & (idx < n_r)
        rr = r0 + np.clip(idx, 0, n_r - 1) * dr
        mv = np.where(ok, basis.circular_mean(d[:, None], rr), 0.0)
        keep = mv != 0.0
        k_idx = np.broadcast_to(np.arange(n_nodes)[:, None], idx.shape)
        rows.append(m * n_r + idx[keep])
        cols.append(k_idx[keep])
        vals.append(mv[keep])
    shape = (len(sensors) * n_r, n_nodes)
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape,
    )


def build_forward(
    geom: SensorGeometry,
    tgrid: TimeGrid,
    igrid: ImageGrid,
    basis: BumpBasis,
    *,
    radial_oversampling: int = RADIAL_OVERSAMPLING,
    normalization: float = 1.0,
    workers: int = 1,
    sensors_per_block: int = SENSORS_PER_BLOCK,
) -> ForwardOperator:
    """Precompute circular means and the time kernel for W.

    Raises TimeWindowError when the time grid does not contain
    [d_min − h_x, d_max + h_x] over all sensor–support distances.
    """
    if abs(basis.spacing - igrid.spacing) > 1e-12 * igrid.spacing:
        raise GridMismatchError(f"basis spacing {basis.spacing} differs from grid spacing {igrid.spacing}")
    if radial_oversampling < 1:
        raise ValueError(f"radial_oversampling must be ≥ 1, got {radial_oversampling}")

    lo, hi = time_window_for(geom, igrid)
    if not tgrid.covers(lo, hi):
        raise TimeWindowError(
            f"time window [{tgrid.start:.4g}, {tgrid.end:.4g}] does not cover the signal "
            f"window [{lo:.4g}, {hi:.4g}]"
        )

    h = igrid.spacing
    dr = h / radial_oversampling
    r0 = max(lo - dr, 0.0)
    n_r = int(math.ceil((hi + dr - r0) / dr)) + 1
    radii = r0 + np.arange(n_r) * dr

    active = igrid.support_mask()
    nodes = igrid.node_coordinates()[active]
    sensors = sensor_positions(geom)

    blocks, bounds = [], []
    for start in range(0, geom.num_sensors, sensors_per_block):
        stop = min(start + sensors_per_block, geom.num_sensors)
        blocks.append(_mean_block(sensors[start:stop], nodes, basis, r0, dr, n_r, radial_oversampling))
        bounds.append((start, stop))

    K = time_kernel(tgrid.times(), radii)
    nnz = sum(b.nnz for b in blocks)
    log.info(
        "forward operator: %d sensors × %d samples, %d active nodes, %d radii, %d mean entries",
        geom.num_sensors, tgrid.num_samples, int(active.sum()), n_r, nnz,
    )
    active.flags.writeable = False
    radii.flags.writeable = False
    K.flags.writeable = False
    return ForwardOperator(
        geometry=geom,
        time_grid=tgrid,
        image_grid=igrid,
        basis=basis,
        radii=radii,
        time_kernel=K,
        mean_blocks=tuple(blocks),
        block_bounds=tuple(bounds),
        active=active,
        normalization=float(normalization),
        workers=max(1, int(workers)),
    )


def apply(op: ForwardOperator, x: CoefficientImage) -> Sinogram:
    """g[m, j] = Σ_k x_k q(‖s_m − k h_x‖, t_j)."""
    check_same_grid(op.image_grid, x.grid)
    data = op.matvec(x.coefficients).reshape(op.data_shape)
    return Sinogram(op.geometry, op.time_grid, data)


def apply_adjoint(op: ForwardOperator, g: Sinogram) -> CoefficientImage:
    """Exact transpose of apply in the Euclidean inner products."""
    if g.geometry != op.geometry:
        raise GridMismatchError(f"sinogram geometry {g.geometry} differs from operator geometry {op.geometry}")
    if g.time_grid != op.time_grid:
        raise GridMismatchError(f"sinogram time grid {g.time_grid} differs from operator time grid {op.time_grid}")
    return CoefficientImage(op.image_grid, op.rmatvec(g.data.ravel()))


def assemble_matrix(op: ForwardOperator) -> np.ndarray:
    """Dense (M·N_t, n²) matrix of op; small instances only."""
    n = op.image_grid.num_nodes
    return op.matvec(np.eye(n))


# ══════════════════════════════════════════════════════════════════
# DIRECT QUADRATURE ORACLE
# ══════════════════════════════════════════════════════════════════

def _angular_moment(a: float, j: int) -> float:
    """∫_0^a (cos α − cos a)^j dα by adaptive quadrature."""
    if j == 0:
        return a
    if a <= 0:
        return 0.0
    ca = math.cos(a)
    val, _ = integrate.quad(lambda al: (math.cos(al) - ca) ** j, 0.0, a, epsabs=1e-15, epsrel=1e-12, limit=200)
    return val


def _mean_and_slope(basis: BumpBasis, d: float, r: float) -> Tuple[float, float]:
    """Circular mean m(r) of a bump at distance d and dm/dr, by adaptive quadrature."""
    h, nu = basis.spacing, basis.exponent
    if r <= 0 or abs(r - d) >= h:
        return 0.0, 0.0
    raw = (d * d + r * r - h * h) / (2.0 * d * r)
    full = raw <= -1.0
    a = math.pi if full else math.acos(min(raw, 1.0))
    k0 = (basis.peak / math.pi) * (2.0 * d / (h * h)) ** nu
    i_nu = _angular_moment(a, nu)
    m = k0 * r ** nu * i_nu
    slope = k0 * nu * r ** (nu - 1) * i_nu
    if not full:
        slope -= k0 * nu * r ** nu * (r * r - d * d + h * h) / (2.0 * d * r * r) * _angular_moment(a, nu - 1)
    return m, slope


def bump_response_quadrature(distance: float, t: float, basis: BumpBasis) -> float:
    """q(d, t) for one bump, independent of the operator's lattice.

    With r = t·sin θ the Abel-type singularity disappears:
    q = ∫_0^{π/2} sin θ·[m(t sin θ) + t sin θ·m′(t sin θ)] dθ.
    """
    h = basis.spacing
    if t <= max(distance - h, 0.0):
        return 0.0

    def integrand(theta: float) -> float:
        s = math.sin(theta)
        m, dm = _mean_and_slope(basis, distance, t * s)
        return s * (m + t * s * dm)

    breaks = [math.asin(v / t) for v in (distance - h, distance, distance + h) if 0.0 < v < t]
    val, _ = integrate.quad(integrand, 0.0, 0.5 * math.pi, points=breaks or None,
                            epsabs=1e-13, epsrel=1e-10, limit=400)
    return val


# ══════════════════════════════════════════════════════════════════
# FDTD REFERENCE
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class FdtdConfig:
    """Square domain [−L, L]², L = half_width + sponge_width, spacing dx, dt = cfl·dx."""
    dx: float
    half_width: float
    cfl: float = 0.5
    sponge_width: float = 2.0
    sponge_strength: Optional[float] = None

    def __post_init__(self):
        if not self.dx > 0:
            raise ValueError(f"dx must be > 0, got {self.dx}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be > 0, got {self.half_width}")
        if self.sponge_width < 0:
            raise ValueError(f"sponge_width must be ≥ 0, got {self.sponge_width}")

    @property
    def dt(self) -> float:
        return self.cfl * self.dx

    @property
    def damping(self) -> float:
        if self.sponge_strength is not None:
            return self.sponge_strength
        return 10.0 / self.sponge_width if self.sponge_width > 0 else 0.0

    def axis(self) -> np.ndarray:
        L = self.half_width + self.sponge_width
        n = int(round(2.0 * L / self.dx)) + 1
        return (np.arange(n) - (n - 1) / 2.0) * self.dx


def fdtd_grid(cfg: FdtdConfig) -> np.ndarray:
    """(n², 2) coordinates of the FDTD nodes, row-major in y."""
    a = cfg.axis()
    yy, xx = np.meshgrid(a, a, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def sample_on_fdtd_grid(x: CoefficientImage, basis: BumpBasis, cfg: FdtdConfig) -> np.ndarray:
    """U*(x) on the FDTD nodes as an (n, n) field."""
    if cfg.dx > basis.spacing / 4 * (1 + 1e-12):
        raise StabilityError(f"FDTD spacing {cfg.dx} exceeds h_x/4 = {basis.spacing / 4}")
    n = cfg.axis().size
    return synthesize(x, basis, fdtd_grid(cfg)).reshape(n, n)


def _check_cfl(cfg: FdtdConfig) -> None:
    if not 0 < cfg.cfl <= MAX_CFL:
        raise StabilityError(f"CFL number {cfg.cfl} violates the 2D bound 1/√2")


def _sponge_profile(cfg: FdtdConfig) -> np.ndarray:
    a = np.abs(cfg.axis())
    if cfg.sponge_width == 0:
        return np.zeros((a.size, a.size))
    ramp = np.clip((a - cfg.half_width) / cfg.sponge_width, 0.0, 1.0) ** 2
    return cfg.damping * (ramp[:, None] + ramp[None, :])


def _laplacian_step(p: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Unscaled five-point Laplacian with homogeneous Dirichlet boundary."""
    out[1:-1, 1:-1] = p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * p[1:-1, 1:-1]
    return out


class _Leapfrog:
    """Damped leapfrog p_tt + σ p_t = Δp, started with p¹ = p⁰ + ½ dt² Δp⁰."""

    def __init__(self, f: np.ndarray, cfg: FdtdConfig):
        _check_cfl(cfg)
        n = cfg.axis().size
        if f.shape != (n, n):
            raise GridMismatchError(f"initial field has shape {f.shape}, FDTD grid is {(n, n)}")
        self.lam2 = cfg.cfl ** 2
        sigma_dt = 0.5 * _sponge_profile(cfg) * cfg.dt
        self.a_minus = 1.0 - sigma_dt
        self.inv_plus = 1.0 / (1.0 + sigma_dt)
        self.lap = np.zeros((n, n))
        self.prev = np.array(f, dtype=np.float64)
        self.prev[0, :] = self.prev[-1, :] = self.prev[:, 0] = self.prev[:, -1] = 0.0
        _laplacian_step(self.prev, self.lap)
        self.cur = self.prev + 0.5 * self.lam2 * self.lap

    def step(self) -> None:
        _laplacian_step(self.cur, self.lap)
        nxt = (2.0 * self.cur - self.a_minus * self.prev + self.lam2 * self.lap) * self.inv_plus
        self.prev, self.cur = self.cur, nxt


def _bilinear_weights(cfg: FdtdConfig, points: np.ndarray):
    a = cfg.axis()
    lim = cfg.half_width * (1 + 1e-12)
    if np.any(np.abs(points) > lim):
        raise StabilityError(f"sensor outside the FDTD interior |x|, |y| ≤ {cfg.half_width}")
    fx = (points[:, 0] - a[0]) / cfg.dx
    fy = (points[:, 1] - a[0]) / cfg.dx
    ix = np.clip(np.floor(fx).astype(np.int64), 0, a.size - 2)
    iy = np.clip(np.floor(fy).astype(np.int64), 0, a.size - 2)
    wx, wy = fx - ix, fy - iy
    return ix, iy, wx, wy


def _sample(p: np.ndarray, ix, iy, wx, wy) -> np.ndarray:
    return ((1 - wy) * ((1 - wx) * p[iy, ix] + wx * p[iy, ix + 1])
            + wy * ((1 - wx) * p[iy + 1, ix] + wx * p[iy + 1, ix + 1]))


def fdtd_reference(f_sampled: np.ndarray, cfg: FdtdConfig, sensors: SensorGeometry, tgrid: TimeGrid) -> Sinogram:
    """Second-order FDTD traces at the sensors, linearly interpolated to tgrid."""
    _check_cfl(cfg)
    pts = sensor_positions(sensors)
    ix, iy, wx, wy = _bilinear_weights(cfg, pts)
    n_steps = int(math.ceil(tgrid.end / cfg.dt)) + 1

    scheme = _Leapfrog(np.asarray(f_sampled, dtype=np.float64), cfg)
    rec = np.empty((n_steps + 1, len(pts)))
    rec[0] = _sample(scheme.prev, ix, iy, wx, wy)
    rec[1] = _sample(scheme.cur, ix, iy, wx, wy)
    for k in range(2, n_steps + 1):
        scheme.step()
        rec[k] = _sample(scheme.cur, ix, iy, wx, wy)
    log.debug("fdtd: %d steps of dt=%.4g on %d² nodes", n_steps, cfg.dt, cfg.axis().size)

    t_fd = np.arange(n_steps + 1) * cfg.dt
    times = tgrid.times()
    data = np.stack([np.interp(times, t_fd, rec[:, m]) for m in range(len(pts))])
    return Sinogram(sensors, tgrid, data)


def fdtd_energy_history(f_sampled: np.ndarray, cfg: FdtdConfig, n_steps: int) -> np.ndarray:
    """Discrete energy ½‖(pⁿ⁺¹−pⁿ)/dt‖² + ½⟨∇pⁿ⁺¹, ∇pⁿ⟩ after each step.

    Conserved by the undamped scheme, decreasing inside the sponge.
    """
    scheme = _Leapfrog(np.asarray(f_sampled, dtype=np.float64), cfg)
    area = cfg.dx * cfg.dx
    lap = np.zeros_like(scheme.cur)

    def energy() -> float:
        vel = (scheme.cur - scheme.prev) / cfg.dt
        _laplacian_step(scheme.prev, lap)
        grad = -float(np.sum(scheme.cur * lap)) / area
        return 0.5 * area * float(np.sum(vel * vel)) + 0.5 * area * grad

    out = [energy()]
    for _ in range(n_steps):
        scheme.step()
        out.append(energy())
    return np.asarray(out)


# ══════════════════════════════════════════════════════════════════
# NORMALIZATION
# ══════════════════════════════════════════════════════════════════

def calibrate_normalization(
    geom: SensorGeometry,
    tgrid: TimeGrid,
    igrid: ImageGrid,
    basis: BumpBasis,
    fdtd_cfg: FdtdConfig,
    *,
    postprocess: Optional[Callable[[Sinogram], Sinogram]] = None,
    radial_oversampling: int = RADIAL_OVERSAMPLING,
) -> float:
    """Least-squares scale matching the operator to FDTD on a single centred bump.

    ``postprocess`` (e.g. a temporal low-pass) is applied to both traces
    before fitting. The closed form is normalized analytically, so the
    result sits at 1 up to FDTD discretization error.
    """
    probe_grid = ImageGrid(igrid.spacing, 1, igrid.center)
    x = point_phantom(probe_grid, 0)
    op = build_forward(geom, tgrid, probe_grid, basis, radial_oversampling=radial_oversampling)
    model = apply(op, x)
    ref = fdtd_reference(sample_on_fdtd_grid(x, basis, fdtd_cfg), fdtd_cfg, geom, tgrid)
    if postprocess is not None:
        model, ref = postprocess(model), postprocess(ref)
    mm = float(np.sum(model.data * model.data))
    if mm == 0:
        raise TimeWindowError("calibration bump produced an all-zero trace")
    scale = float(np.sum(model.data * ref.data)) / mm
    log.info("normalization calibrated against FDTD: %.6f", scale)
    return scale


def relative_trace_error(a: Sinogram, b: Sinogram) -> float:
    """‖a − b‖/‖b‖ over the whole sinogram."""
    nb = b.norm()
    if nb == 0:
        raise DegenerateInputError("reference sinogram is zero")
    return float(np.linalg.norm(a.data - b.data) / nb)
