"""
recon.py — Reconstruction solvers and image-quality metrics.

Solvers (all matrix-free, one forward + one adjoint per iteration):
  - estimate_operator_norm   power iteration on AᵀA, returns ‖A‖²
  - reconstruct_tikhonov     min ‖Ax − g‖² + λ‖x‖², conjugate residuals on
                             the normal equations (monotone residual)
  - reconstruct_l1pos        min ½‖Ax − g‖² + μ‖x‖₁ s.t. x ≥ 0, FISTA with
                             function-value restart and backtracking

Metrics:
  - compute_metrics          relative L² error, PSNR, grid contrast, resolved flag,
                             share of contrast windows clipped at zero
  - parameter_sweep          logarithmic λ / μ sweep against a reference

Every solver takes a ForwardOperator or any scipy LinearOperator.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from geometry_types import (
    CoefficientImage,
    DegenerateInputError,
    GridMismatchError,
    Sinogram,
    check_same_grid,
)
from phantom import GridPhantomSpec
from wave_forward import ForwardOperator

log = logging.getLogger(__name__)

OperatorLike = Union[ForwardOperator, LinearOperator, np.ndarray]

RESOLVED_THRESHOLD = 0.2
PSNR_CAP_DB = 300.0
# Step-size safety factor on the power-iteration estimate (which is a lower bound).
STEP_SAFETY = 1.05


# ── Configs ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class TikhonovConfig:
    lam: float = 1e-3
    max_iters: int = 200
    normal_residual_tol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be ≥ 0, got {self.lam}")
        if not self.normal_residual_tol > 0:
            raise ValueError(f"normal_residual_tol must be > 0, got {self.normal_residual_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be ≥ 1, got {self.max_iters}")


@dataclass(frozen=True)
class L1PosConfig:
    mu: float = 0.0
    max_iters: int = 500
    step_size: Optional[float] = None
    objective_tol: float = 1e-6
    restart: bool = True
    norm_iters: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu must be ≥ 0, got {self.mu}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if not self.objective_tol > 0:
            raise ValueError(f"objective_tol must be > 0, got {self.objective_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be ≥ 1, got {self.max_iters}")


# ── Results ──────────────────────────────────────────────────────

@dataclass
class ConvergenceLog:
    """Per-iteration (objective, residual); residual is the solver's stopping quantity."""
    rows: List[Tuple[int, float, float]] = field(default_factory=list)

    def record(self, it: int, objective: float, residual: float) -> None:
        self.rows.append((it, float(objective), float(residual)))

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iter", "objective", "residual"])
            for it, obj, res in self.rows:
                w.writerow([it, repr(obj), repr(res)])


@dataclass
class SolveResult:
    x: np.ndarray
    log: ConvergenceLog
    converged: bool
    iterations: int
    final_residual: float


@dataclass
class ReconResult:
    image: CoefficientImage
    log: ConvergenceLog
    converged: bool
    iterations: int
    final_residual: float


def as_operator(op: OperatorLike) -> LinearOperator:
    if isinstance(op, ForwardOperator):
        return op.as_linear_operator()
    return aslinearoperator(op)


# ══════════════════════════════════════════════════════════════════
# OPERATOR NORM
# ══════════════════════════════════════════════════════════════════

def estimate_operator_norm(op: OperatorLike, iters: int = 30, seed: int = 0) -> float:
    """Power iteration on AᵀA; returns the Rayleigh quotient ≈ ‖A‖²."""
    if iters < 10:
        raise ValueError(f"power iteration needs ≥ 10 iterations, got {iters}")
    A = as_operator(op)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est, prev = 0.0, 0.0
    for _ in range(iters):
        w = A.rmatvec(A.matvec(v))
        prev, est = est, float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            raise DegenerateInputError("operator norm estimate hit the null space (zero operator?)")
        v = w / nw
    if est <= 0:
        raise DegenerateInputError("zero operator")
    ratio = prev / est if est > 0 else float("nan")
    log.info("operator norm²: %.6g after %d iterations (last ratio %.6f)", est, iters, ratio)
    return est


# ══════════════════════════════════════════════════════════════════
# TIKHONOV
# ══════════════════════════════════════════════════════════════════

def solve_tikhonov(A: OperatorLike, data: np.ndarray, cfg: TikhonovConfig) -> SolveResult:
    """Conjugate residuals on (AᵀA + λI)x = Aᵀg.

    Residual norms are recorded every iteration and are non-increasing;
    the final solution is checked with one extra operator application.
    """
    A = as_operator(A)
    lam = cfg.lam
    g = np.asarray(data, dtype=np.float64).ravel()
    b = A.rmatvec(g)
    nb = float(np.linalg.norm(b))
    clog = ConvergenceLog()
    x = np.zeros(A.shape[1])
    if nb == 0:
        clog.record(0, float(g @ g), 0.0)
        return SolveResult(x, clog, True, 0, 0.0)

    Ax = np.zeros(A.shape[0])
    r = b.copy()
    Ar = A.matvec(r)
    Br = A.rmatvec(Ar) + lam * r
    p, Ap, Bp = r.copy(), Ar.copy(), Br.copy()
    rBr = float(r @ Br)
    res = nb
    clog.record(0, float(g @ g), res)

    best_x, best_res = x.copy(), res
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        denom = float(Bp @ Bp)
        if denom == 0:
            break
        alpha = rBr / denom
        x += alpha * p
        Ax += alpha * Ap
        r -= alpha * Bp
        res = float(np.linalg.norm(r))
        resid = Ax - g
        clog.record(it, float(resid @ resid) + lam * float(x @ x), res)
        log.debug("tikhonov it=%d residual=%.3e", it, res / nb)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= cfg.normal_residual_tol * nb:
            converged = True
            break
        Ar = A.matvec(r)
        Br = A.rmatvec(Ar) + lam * r
        rBr_new = float(r @ Br)
        beta = rBr_new / rBr
        rBr = rBr_new
        p = r + beta * p
        Ap = Ar + beta * Ap
        Bp = Br + beta * Bp

    if not converged:
        x = best_x
        log.warning(
            "tikhonov: %d iterations exhausted, relative normal residual %.3e > %.1e",
            cfg.max_iters, best_res / nb, cfg.normal_residual_tol,
        )
    true_res = float(np.linalg.norm(A.rmatvec(A.matvec(x)) + lam * x - b))
    log.info("tikhonov: %d iterations, verified normal residual %.3e (relative)", it, true_res / nb)
    return SolveResult(x, clog, converged, it, true_res / nb)


# ══════════════════════════════════════════════════════════════════
# ℓ¹ + POSITIVITY
# ══════════════════════════════════════════════════════════════════

def soft_threshold_nonneg(v: np.ndarray, tau: float) -> np.ndarray:
    """prox of τ‖·‖₁ + indicator(x ≥ 0): shrink, then clamp."""
    shrunk = np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)
    return np.maximum(shrunk, 0.0)


def solve_l1pos(A: OperatorLike, data: np.ndarray, cfg: L1PosConfig, L: Optional[float] = None) -> SolveResult:
    """FISTA for ½‖Ax − g‖² + μ‖x‖₁ over x ≥ 0.

    With restart enabled an iterate that would raise the objective is
    replaced by a plain proximal step from the current point (momentum
    reset), and the step is halved until the quadratic upper bound holds,
    so the objective never increases.
    """
    A = as_operator(A)
    g = np.asarray(data, dtype=np.float64).ravel()
    mu = cfg.mu
    if cfg.step_size is not None:
        step = cfg.step_size
    else:
        if L is None:
            L = estimate_operator_norm(A, iters=cfg.norm_iters, seed=cfg.seed)
        step = 1.0 / (STEP_SAFETY * L)

    n = A.shape[1]
    x = np.zeros(n)
    Ax = np.zeros(A.shape[0])
    x_old, Ax_old = x.copy(), Ax.copy()
    t = 1.0

    def objective(ax: np.ndarray, xx: np.ndarray) -> float:
        rr = ax - g
        return 0.5 * float(rr @ rr) + mu * float(np.sum(xx))

    def prox_step(y: np.ndarray, Ay: np.ndarray, grad: np.ndarray, stp: float):
        """Proximal step with backtracking; returns (x⁺, A x⁺, step)."""
        fy = 0.5 * float((Ay - g) @ (Ay - g))
        while True:
            xn = soft_threshold_nonneg(y - stp * grad, mu * stp)
            Axn = A.matvec(xn)
            d = xn - y
            fx = 0.5 * float((Axn - g) @ (Axn - g))
            if fx <= fy + float(grad @ d) + float(d @ d) / (2.0 * stp) * (1 + 1e-12) + 1e-300:
                return xn, Axn, stp
            stp *= 0.5
            log.debug("l1pos: backtracking, step %.3e", stp)

    F = objective(Ax, x)
    clog = ConvergenceLog()
    clog.record(0, F, float("nan"))
    converged = False
    res = float("inf")
    it = 0
    for it in range(1, cfg.max_iters + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        y = x + beta * (x - x_old)
        Ay = Ax + beta * (Ax - Ax_old)
        grad = A.rmatvec(Ay - g)
        xn, Axn, step = prox_step(y, Ay, grad, step)
        Fn = objective(Axn, xn)

        if cfg.restart and Fn > F:
            grad = A.rmatvec(Ax - g)
            xn, Axn, step = prox_step(x, Ax, grad, step)
            Fn = objective(Axn, xn)
            y = x
            t_next = 1.0
            log.debug("l1pos it=%d: restart", it)

        nx = float(np.linalg.norm(xn))
        step_norm = float(np.linalg.norm(xn - y))
        res = 0.0 if step_norm == 0 else step_norm / max(nx, np.finfo(float).tiny)
        x_old, Ax_old = x, Ax
        x, Ax, F, t = xn, Axn, Fn, t_next
        clog.record(it, F, res)
        log.debug("l1pos it=%d objective=%.6e residual=%.3e", it, F, res)

        if res <= cfg.objective_tol:
            res = fixed_point_residual(A, g, x, Ax, mu, step)
            if res <= cfg.objective_tol:
                converged = True
                break

    if not converged:
        log.warning("l1pos: %d iterations exhausted, fixed-point residual %.3e", cfg.max_iters, res)
    log.info("l1pos: %d iterations, objective %.6e, %d nonzeros", it, F, int(np.count_nonzero(x)))
    return SolveResult(x, clog, converged, it, res)


def fixed_point_residual(A: LinearOperator, g: np.ndarray, x: np.ndarray, Ax: np.ndarray, mu: float, step: float) -> float:
    """‖x − prox(x − step·∇f(x))‖/‖x‖, zero at x = 0 when 0 is a fixed point."""
    grad = A.rmatvec(Ax - g)
    diff = x - soft_threshold_nonneg(x - step * grad, mu * step)
    nd, nx = float(np.linalg.norm(diff)), float(np.linalg.norm(x))
    if nx == 0:
        return 0.0 if nd == 0 else float("inf")
    return nd / nx


# ── ForwardOperator wrappers ─────────────────────────────────────

def _check_data(op: ForwardOperator, g: Sinogram) -> None:
    if g.geometry != op.geometry or g.time_grid != op.time_grid:
        raise GridMismatchError("sinogram does not match the operator's geometry/time grid")


def reconstruct_tikhonov(op: ForwardOperator, g: Sinogram, cfg: TikhonovConfig) -> ReconResult:
    _check_data(op, g)
    sol = solve_tikhonov(op.as_linear_operator(), g.data, cfg)
    return ReconResult(CoefficientImage(op.image_grid, sol.x), sol.log, sol.converged, sol.iterations, sol.final_residual)


def reconstruct_l1pos(op: ForwardOperator, g: Sinogram, cfg: L1PosConfig, L: Optional[float] = None) -> ReconResult:
    _check_data(op, g)
    sol = solve_l1pos(op.as_linear_operator(), g.data, cfg, L=L)
    return ReconResult(CoefficientImage(op.image_grid, sol.x), sol.log, sol.converged, sol.iterations, sol.final_residual)


# ══════════════════════════════════════════════════════════════════
# METRICS
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class MetricsReport:
    relative_l2_error: float
    psnr: float
    grid_contrast: Optional[float]
    resolved_flag: bool
    threshold: float = RESOLVED_THRESHOLD
    clipped_window_share: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "relative_l2_error": self.relative_l2_error,
            "psnr": self.psnr,
            "grid_contrast": self.grid_contrast,
            "resolved_flag": self.resolved_flag,
            "threshold": self.threshold,
            "clipped_window_share": self.clipped_window_share,
        }


def _scanline_windows(spec: GridPhantomSpec, samples_per_pitch: int, margin: float):
    """Yield (u, v) sample arrays for each period window on interior scanlines.

    Scanlines run across the bars of one family along a gap centre of the
    other family; windows are one pitch long and centred on a bar.
    """
    p = spec.pitch
    half = 0.5 * spec.extent - margin
    j_bars = np.arange(math.ceil((-half + 0.5 * p) / p - 1e-9), math.floor((half - 0.5 * p) / p + 1e-9) + 1)
    j_gaps = np.arange(math.ceil(-half / p - 0.5 - 1e-9), math.floor(half / p - 0.5 + 1e-9) + 1)
    offs = (np.arange(samples_per_pitch) / samples_per_pitch - 0.5) * p
    for jg in j_gaps:
        across = (jg + 0.5) * p
        for jb in j_bars:
            along = jb * p + offs
            yield along, np.full_like(along, across)   # family in u, scan along u
            yield np.full_like(along, across), along   # family in v, scan along v


def _window_contrasts(x: CoefficientImage, spec: GridPhantomSpec, samples_per_pitch: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-window Michelson contrast of the profile clipped at 0, and whether clipping bit."""
    grid = x.grid
    n, h = grid.samples_per_axis, grid.spacing
    img = x.as_array()
    c, s = math.cos(spec.orientation), math.sin(spec.orientation)
    windows = list(_scanline_windows(spec, samples_per_pitch, spec.pitch))
    if not windows:
        windows = list(_scanline_windows(spec, samples_per_pitch, 0.0))
    if not windows:
        log.warning("grid phantom too small for a contrast measurement (extent %.3g, pitch %.3g)", spec.extent, spec.pitch)
        return np.zeros(0), np.zeros(0, dtype=bool)
    values, clipped = [], []
    for u, v in windows:
        px = spec.center[0] + c * u - s * v
        py = spec.center[1] + s * u + c * v
        col = (px - grid.center[0]) / h + (n - 1) / 2.0
        row = (py - grid.center[1]) / h + (n - 1) / 2.0
        raw = ndimage.map_coordinates(img, [row, col], order=1, mode="constant", cval=0.0)
        prof = np.clip(raw, 0.0, None)
        hi, lo = float(prof.max()), float(prof.min())
        values.append((hi - lo) / (hi + lo) if hi + lo > 0 else 0.0)
        clipped.append(bool(raw.min() < 0))
    return np.asarray(values), np.asarray(clipped)


def grid_contrast(x: CoefficientImage, spec: GridPhantomSpec, samples_per_pitch: int = 32) -> float:
    """Median per-period Michelson contrast over interior bar-crossing scanlines.

    Profiles are clipped at 0, so a window dipping below zero scores 1.0;
    clipped_window_share tells how many did.
    """
    values, _ = _window_contrasts(x, spec, samples_per_pitch)
    return float(np.median(values)) if values.size else 0.0


def clipped_window_share(x: CoefficientImage, spec: GridPhantomSpec, samples_per_pitch: int = 32) -> float:
    """Fraction of contrast windows whose profile minimum is negative."""
    _, clipped = _window_contrasts(x, spec, samples_per_pitch)
    return float(np.mean(clipped)) if clipped.size else 0.0


def compute_metrics(
    x: CoefficientImage,
    reference: CoefficientImage,
    spec: Optional[GridPhantomSpec],
    threshold: float = RESOLVED_THRESHOLD,
    samples_per_pitch: int = 32,
) -> MetricsReport:
    """Contrast and the resolved flag need a grid phantom; without one they are None and False."""
    check_same_grid(x.grid, reference.grid)
    ref = reference.coefficients
    nref = float(np.linalg.norm(ref))
    peak = float(np.max(np.abs(ref)))
    if nref == 0 or peak == 0:
        raise DegenerateInputError("reference image is zero; relative error and PSNR undefined")
    diff = x.coefficients - ref
    rel = float(np.linalg.norm(diff)) / nref
    rmse = max(float(np.sqrt(np.mean(diff * diff))), peak * 10 ** (-PSNR_CAP_DB / 20))
    psnr = 20.0 * math.log10(peak / rmse)
    if spec is None:
        return MetricsReport(rel, psnr, None, False, threshold)
    values, clipped = _window_contrasts(x, spec, samples_per_pitch)
    contrast = float(np.median(values)) if values.size else 0.0
    share = float(np.mean(clipped)) if clipped.size else 0.0
    if share > 0.5:
        log.info("contrast: %.0f%% of windows dip below zero and saturate at 1.0", 100 * share)
    return MetricsReport(rel, psnr, contrast, contrast >= threshold, threshold, share)


# ══════════════════════════════════════════════════════════════════
# PARAMETER SWEEP
# ══════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class SweepPoint:
    value: float
    relative_error: float
    converged: bool


def parameter_sweep(
    op: ForwardOperator,
    g: Sinogram,
    reference: CoefficientImage,
    method: str,
    values: Sequence[float],
    base: Union[TikhonovConfig, L1PosConfig, None] = None,
) -> Tuple[float, List[SweepPoint]]:
    """Reconstruct for each λ (tikhonov) or μ (l1pos); return the best value and all points."""
    if not values:
        raise ValueError("parameter sweep needs at least one value")
    nref = reference.norm()
    if nref == 0:
        raise DegenerateInputError("reference image is zero")
    L = None
    points: List[SweepPoint] = []
    for val in values:
        if method == "tikhonov":
            cfg = TikhonovConfig(lam=val) if base is None else TikhonovConfig(val, base.max_iters, base.normal_residual_tol)
            out = reconstruct_tikhonov(op, g, cfg)
        elif method == "l1pos":
            b = base if isinstance(base, L1PosConfig) else L1PosConfig()
            if L is None and b.step_size is None:
                L = estimate_operator_norm(op, iters=b.norm_iters, seed=b.seed)
            cfg = L1PosConfig(val, b.max_iters, b.step_size, b.objective_tol, b.restart, b.norm_iters, b.seed)
            out = reconstruct_l1pos(op, g, cfg, L=L)
        else:
            raise ValueError(f"unknown method {method!r}")
        err = float(np.linalg.norm(out.image.coefficients - reference.coefficients)) / nref
        points.append(SweepPoint(float(val), err, out.converged))
        log.info("sweep %s=%.3g: relative error %.4f", method, val, err)
    best = min(points, key=lambda pt: pt.relative_error)
    return best.value, points


def log_spaced(lo: float, hi: float, count: int) -> List[float]:
    return [float(v) for v in np.geomspace(lo, hi, count)]
