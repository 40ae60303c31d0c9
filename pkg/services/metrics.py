"""
Metrics — Norms of field differences, the dissipation energy, scaling fits
and the Einstein-coefficient sweep.

Sup norms on Ω_δ use a deterministic sample set: a uniform grid intersected
with the region plus rings of Lebedev directions (rotated by a seeded random
rotation) at fixed multiples of the exclusion radius around every particle,
where the error concentrates.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from models.particles import ParticleConfig, RegionPredicate
from models.study import REPORT_COLUMNS, ExperimentReport, HomogenizeOptions
from services.density import DensityField
from services.fields import FlowField, ForceField
from services.homogenize import solve_bar_u, solve_hat_v
from utils.exceptions import DegenerateFitError, EmptyRegionError, QuadratureError
from utils.quadrature import lebedev_rule

logger = logging.getLogger(__name__)

RING_FACTORS = (1.01, 1.1, 1.5)
RATIO_COLUMNS = tuple(c for c in REPORT_COLUMNS if c.endswith(("_over_phi", "_over_phi2")))


# ── Sampling and norms ──────────────────────────────────────────

def _cube_nodes(half_width: float, spacing: float) -> np.ndarray:
    n = max(int(math.floor(2.0 * half_width / spacing + 1e-9)) + 1, 2)
    axis = np.linspace(-half_width, half_width, n)
    return np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)


def region_samples(region: RegionPredicate, spacing: float = 0.1, extent: Optional[float] = None,
                   ring_factors: Sequence[float] = RING_FACTORS, quad_order: int = 26,
                   seed: int = 0) -> np.ndarray:
    """Grid over [−extent, extent]³ plus particle rings, restricted to the region."""
    cfg = region.config
    extent = cfg.box_scale if extent is None else float(extent)
    parts = [_cube_nodes(extent, spacing)]
    if cfg.n_particles:
        dirs, _ = lebedev_rule(quad_order)
        rotation = Rotation.random(None, np.random.default_rng(seed))
        dirs = rotation.apply(dirs)
        for factor in ring_factors:
            radius = factor * region.exclusion_radius
            parts.append((cfg.centers[:, None, :] + radius * dirs[None]).reshape(-1, 3))
    pts = np.vstack(parts)
    pts = pts[region.contains(pts)]
    if pts.shape[0] == 0:
        raise EmptyRegionError(f"No sample points survive the Ω_δ mask (r={region.exclusion_radius:.4g})")
    return pts


def sup_norm_diff(a: FlowField, b: FlowField, region: RegionPredicate, spacing: float = 0.1,
                  extent: Optional[float] = None, ring_factors: Sequence[float] = RING_FACTORS,
                  quad_order: int = 26, seed: int = 0, points: Optional[np.ndarray] = None) -> float:
    """max |a − b| over the Ω_δ sample set (or over ``points`` when given)."""
    pts = points if points is not None else region_samples(region, spacing, extent, ring_factors,
                                                            quad_order, seed)
    if pts.shape[0] == 0:
        raise EmptyRegionError("Empty sample set")
    return float(np.max(np.linalg.norm(a.value(pts) - b.value(pts), axis=1)))


def _refined_cells(centers: np.ndarray, size: float, cfg: Optional[ParticleConfig],
                   refine: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cell midpoints and volumes, splitting cells cut by a sphere into refine³ pieces."""
    volumes = np.full(centers.shape[0], size ** 3)
    if cfg is None or cfg.n_particles == 0 or refine <= 1:
        return centers, volumes
    dist = cfg.nearest_distance(centers)
    cut = np.abs(dist - cfg.radius) <= 0.5 * math.sqrt(3.0) * size
    if not np.any(cut):
        return centers, volumes
    sub = (np.arange(refine) + 0.5) / refine - 0.5
    offsets = size * np.stack(np.meshgrid(sub, sub, sub, indexing="ij"), axis=-1).reshape(-1, 3)
    fine = (centers[cut][:, None, :] + offsets[None]).reshape(-1, 3)
    fine_volumes = np.full(fine.shape[0], (size / refine) ** 3)
    return np.vstack([centers[~cut], fine]), np.concatenate([volumes[~cut], fine_volumes])


def _box_cells(lo, hi, spacing: float) -> Tuple[np.ndarray, float]:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    counts = np.maximum(np.round((hi - lo) / spacing).astype(int), 1)
    sizes = (hi - lo) / counts
    axes = [lo[d] + sizes[d] * (np.arange(counts[d]) + 0.5) for d in range(3)]
    mids = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return mids, float(np.prod(sizes))


def lp_norm_diff(a: FlowField, b: FlowField, box: Tuple[Sequence[float], Sequence[float]], p: float,
                 spacing: float = 0.1, cfg: Optional[ParticleConfig] = None, refine: int = 4) -> float:
    """(∫_U |a − b|^p)^{1/p} over the box U by the midpoint rule, balls included."""
    if not 1.0 <= p <= 1.5:
        raise ValueError(f"p must lie in [1, 3/2], got {p}")
    lo, hi = box
    mids, volume = _box_cells(lo, hi, spacing)
    size = volume ** (1.0 / 3.0)
    pts, volumes = _refined_cells(mids, size, cfg, refine)
    diff = np.linalg.norm(a.value(pts) - b.value(pts), axis=1)
    if not np.all(np.isfinite(diff)):
        raise QuadratureError("Non-finite field difference in L^p quadrature")
    return float(np.sum(volumes * diff ** p) ** (1.0 / p))


@dataclass(frozen=True)
class EnergyEstimate:
    value: float
    tail: float
    radius: float


def dissipation_energy(w: FlowField, f: ForceField, cfg: Optional[ParticleConfig] = None,
                       radius: Optional[float] = None, spacing: float = 0.05, refine: int = 4) -> EnergyEstimate:
    """E(w) = ∫ |ew|² − f^N·w over a ball, with the |x|⁻⁴ tail of |ew|² estimated.

    f^N is f with the particle balls removed when ``cfg`` is given.
    """
    box_scale = cfg.box_scale if cfg is not None else 1.0
    radius = 2.0 * box_scale + f.support_radius if radius is None else float(radius)
    mids, volume = _box_cells([-radius] * 3, [radius] * 3, spacing)
    mids = mids[np.linalg.norm(mids, axis=1) <= radius]
    pts, volumes = _refined_cells(mids, volume ** (1.0 / 3.0), cfg, refine)

    sym = w.symmetric_gradient(pts)
    density = np.sum(sym * sym, axis=(1, 2))
    force = f(pts)
    if cfg is not None and cfg.n_particles:
        force = force * (cfg.nearest_distance(pts) > cfg.radius)[:, None]
    work = np.sum(force * w.value(pts), axis=1)
    if not (np.all(np.isfinite(density)) and np.all(np.isfinite(work))):
        raise QuadratureError("Non-finite integrand in dissipation energy")
    value = float(np.sum(volumes * (density - work)))

    r = np.linalg.norm(pts, axis=1)
    shell = r >= 0.9 * radius
    tail = 0.0
    if np.any(shell):
        decay = float(np.mean(density[shell] * r[shell] ** 4))
        tail = 4.0 * np.pi * decay / radius
    return EnergyEstimate(value, tail, radius)


# ── Fits ────────────────────────────────────────────────────────

def fit_scaling_exponent(pairs: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """Least-squares slope of log y against log x and its r² (nan when y is constant)."""
    if len(pairs) < 3:
        raise ValueError(f"Need at least 3 pairs, got {len(pairs)}")
    data = np.asarray(pairs, dtype=float)
    if np.any(data <= 0) or not np.all(np.isfinite(data)):
        raise ValueError("Scaling fits need finite positive values")
    lx, ly = np.log(data[:, 0]), np.log(data[:, 1])
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    if np.all(lx == lx[0]):
        raise DegenerateFitError("All abscissae are equal")
    if np.all(ly == ly[0]):
        return 0.0, float("nan")
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    residual = ly - (ly.mean() + slope * (lx - lx.mean()))
    return slope, 1.0 - float(np.sum(residual ** 2)) / ss_tot


def summarize_scaling(report: ExperimentReport) -> Dict[str, Tuple[float, float]]:
    """Exponent of every ratio column against N, over the rows where it is finite."""
    summary: Dict[str, Tuple[float, float]] = {}
    for column in RATIO_COLUMNS:
        pairs = [(row["N"], row[column]) for row in report.rows
                 if np.isfinite(row[column]) and row[column] > 0]
        if len(pairs) >= 3:
            summary[column] = fit_scaling_exponent(pairs)
    return summary


# ── Einstein coefficient ────────────────────────────────────────

@dataclass
class CoefficientSweep:
    betas: List[float] = field(default_factory=list)
    errors: List[float] = field(default_factory=list)
    best_beta: float = float("nan")


def _parabolic_minimum(xs: np.ndarray, ys: np.ndarray) -> float:
    k = int(np.argmin(ys))
    if k == 0 or k == len(xs) - 1:
        return float(xs[k])
    x0, x1, x2 = xs[k - 1:k + 2]
    y0, y1, y2 = ys[k - 1:k + 2]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 ** 2 * (y0 - y1) + x1 ** 2 * (y2 - y0) + x0 ** 2 * (y1 - y2)) / denom
    if a <= 0:
        return float(x1)
    return float(np.clip(-b / (2.0 * a), x0, x2))


def einstein_coefficient_sweep(u_approx: FlowField, f: ForceField, rho: DensityField,
                               opts: HomogenizeOptions, region: RegionPredicate,
                               betas: Sequence[float], spacing: float = 0.1, seed: int = 0,
                               hat_v: Optional[FlowField] = None) -> CoefficientSweep:
    """Minimise ‖u_approx − ū_β‖_∞(Ω_δ) over β in 2 + βφρ."""
    pts = region_samples(region, spacing, seed=seed)
    reference = u_approx.value(pts)
    hat_v = hat_v if hat_v is not None else solve_hat_v(f, rho, opts)
    sweep = CoefficientSweep()
    for beta in betas:
        bar_u, _ = solve_bar_u(f, rho, opts, beta=beta, hat_v=hat_v)
        error = float(np.max(np.linalg.norm(reference - bar_u.value(pts), axis=1)))
        sweep.betas.append(float(beta))
        sweep.errors.append(error)
        logger.debug(f"β = {beta:g}: sup error {error:.4e}")
    sweep.best_beta = _parabolic_minimum(np.array(sweep.betas), np.array(sweep.errors))
    logger.info(f"Einstein coefficient sweep: best β = {sweep.best_beta:.3f}")
    return sweep
