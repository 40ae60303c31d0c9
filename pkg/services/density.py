"""
Density — coarse-grained particle density ρ^N and its mollified version ρ.

ρ^N(x) = (4π/3)·n(A_j)/(N s³) on the half-open cube A_j = [j s, (j+1) s) ∋ x.
The mollified density is the convolution ρ^N ∗ η_w with the normalised quartic
bump η_w(z) = c·(1 − |z|²/w²)², c = 105/(32πw³). Each cube contributes
∫_{A_j} η_w(x − y) dy, written by inclusion–exclusion over the cube corners as
rectangle integrals of the bump. Those are closed form in two directions; the
third is integrated with Gauss–Legendre nodes per cube slab, which is exact
wherever a whole slab lies inside the bump support. The gradient needs only
rectangle integrals and is closed form.
"""

import csv
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from models.particles import ParticleConfig
from services.particle_generator import default_cube_side
from utils.exceptions import GridError
from utils.parallel import chunked_map
from utils.quadrature import gauss_legendre

logger = logging.getLogger(__name__)

# c·w³ for the unit-mass quartic bump.
BUMP_NORM = 105.0 / (32.0 * np.pi)
# ∫|∇η_w| equals this constant divided by w.
BUMP_GRADIENT_MASS = 105.0 / 24.0
MIN_SLAB_NODES = 4
MOLLIFIER_CHUNK = 1024


def bump_constant(width: float) -> float:
    """Normalisation c with ∫ c(1 − |z|²/w²)² dz = 1."""
    return BUMP_NORM / width ** 3


def bump_integral(width: float) -> float:
    """Radial Gauss quadrature of the normalised bump (exact for the polynomial)."""
    r, w = gauss_legendre(6, 0.0, width)
    t = 1.0 - (r / width) ** 2
    return float(4.0 * np.pi * np.sum(w * bump_constant(width) * t ** 2 * r ** 2))


def _root_power_integral(u: np.ndarray, c2: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """∫_0^u (c² − t²)^{5/2} dt for 0 ≤ u ≤ c, given r² = c² − u²."""
    r = np.sqrt(np.clip(r2, 0.0, None))
    c = np.sqrt(c2)
    ratio = np.divide(u, c, out=np.zeros_like(u), where=c > 0.0)
    i1 = 0.5 * (u * r + c2 * np.arcsin(np.clip(ratio, -1.0, 1.0)))
    i3 = 0.25 * u * r ** 3 + 0.75 * c2 * i1
    return u * r ** 5 / 6.0 + (5.0 / 6.0) * c2 * i3


def rectangle_integral(m, a, b) -> np.ndarray:
    """∫_0^a ∫_0^b (m − u² − v²)₊² dv du for a, b ≥ 0 (unit bump, m = 1 − z²)."""
    m, a, b = np.broadcast_arrays(np.clip(np.asarray(m, dtype=float), 0.0, None),
                                  np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    c = np.sqrt(m)
    beyond = a >= c
    a = np.where(beyond, c, a)
    a_rest = np.where(beyond, 0.0, m - a * a)
    # for u below u_star the v range is capped by b, above it by the circle
    u_star = np.sqrt(np.clip(m - b * b, 0.0, None))
    below = a < u_star
    u1 = np.where(below, a, u_star)
    u1_rest = np.where(below, m - a * a, np.minimum(b * b, m))
    capped = (b * (m * m * u1 - (2.0 / 3.0) * m * u1 ** 3 + u1 ** 5 / 5.0)
              - (2.0 / 3.0) * b ** 3 * (m * u1 - u1 ** 3 / 3.0)
              + b ** 5 * u1 / 5.0)
    free = (8.0 / 15.0) * (_root_power_integral(a, m, a_rest) - _root_power_integral(u1, m, u1_rest))
    return capped + free


def _signed_rectangle(z, p, q) -> np.ndarray:
    """Bump integral over [0, p] × [0, q] (oriented) on the slice at height z."""
    return np.sign(p) * np.sign(q) * rectangle_integral(1.0 - z * z, np.abs(p), np.abs(q))


class DensityField:
    """Piecewise-constant ρ^N on a cube grid, optionally mollified.

    ``counts`` covers the cube indices ``index_origin + (0..shape-1)``; cube
    ``j`` is [j s, (j+1) s). The object is immutable once built.
    """

    def __init__(self, cube_side: float, index_origin: np.ndarray, counts: np.ndarray,
                 n_particles: int, mollifier_width: Optional[float] = None, slab_nodes: int = 12):
        self.cube_side = float(cube_side)
        self.index_origin = np.asarray(index_origin, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.counts.setflags(write=False)
        self.n_particles = int(n_particles)
        self.rho_grid = (4.0 * np.pi / 3.0) * self.counts / (max(self.n_particles, 1) * self.cube_side ** 3)
        self.rho_grid.setflags(write=False)
        self.mollifier_width = mollifier_width
        self.slab_nodes = int(slab_nodes)
        self._slab_rule = gauss_legendre(self.slab_nodes, 0.0, 1.0)
        # cubes met by [x − w, x + w] along one axis
        self._window = int(np.floor(2.0 * mollifier_width / self.cube_side)) + 2 if mollifier_width else 0

    # ── Grid geometry ───────────────────────────────────────────
    @property
    def origin(self) -> np.ndarray:
        return self.index_origin * self.cube_side

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.counts.shape)

    @property
    def is_mollified(self) -> bool:
        return self.mollifier_width is not None

    def occupied_indices(self) -> np.ndarray:
        return np.argwhere(self.counts > 0) + self.index_origin

    def support_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """Axis-aligned box containing the support of ρ (and of ρ^N)."""
        occupied = self.occupied_indices()
        if occupied.size == 0:
            zero = np.zeros(3)
            return zero, zero
        pad = self.mollifier_width or 0.0
        lo = occupied.min(axis=0) * self.cube_side - pad
        hi = (occupied.max(axis=0) + 1) * self.cube_side + pad
        return lo, hi

    # ── Coarse density ──────────────────────────────────────────
    def rho_n(self, points) -> np.ndarray:
        """Piecewise-constant ρ^N at ``points`` (lower cube faces inclusive)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        idx = np.floor(pts / self.cube_side).astype(np.int64) - self.index_origin
        inside = np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)
        out = np.zeros(pts.shape[0])
        if np.any(inside):
            ii = idx[inside]
            out[inside] = self.rho_grid[ii[:, 0], ii[:, 1], ii[:, 2]]
        return out

    def coarse_mass(self) -> float:
        """∫ρ^N = Σ_j ρ^N(A_j) s³ (equals 4π/3 for N ≥ 1)."""
        return float(np.sum(self.rho_grid) * self.cube_side ** 3)

    def particle_volume(self, phi: float) -> float:
        """Σ_j φ ρ^N(A_j) s³, the total particle volume (4π/3)·N·R³."""
        return phi * self.coarse_mass()

    @property
    def sup_norm(self) -> float:
        """max ρ^N, which also bounds the mollified density."""
        return float(self.rho_grid.max()) if self.rho_grid.size else 0.0

    # ── Mollified density ───────────────────────────────────────
    def _local_block(self, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """ρ^N on the cubes around every target, zero padded, and the scaled corner offsets.

        Returns ``padded`` of shape (T, m+2, m+2, m+2) and ``q`` of shape
        (T, m+1, 3) with q = (x − k s)/w for the window corners k.
        """
        s = self.cube_side
        width = float(self.mollifier_width)
        m = self._window
        lo = np.floor((pts - width) / s).astype(np.int64)
        idx = lo[:, None, :] + np.arange(m)[None, :, None] - self.index_origin
        shape = np.array(self.shape)
        valid = (idx >= 0) & (idx < shape)
        safe = np.clip(idx, 0, shape - 1)
        block = self.rho_grid[safe[:, :, 0][:, :, None, None],
                              safe[:, :, 1][:, None, :, None],
                              safe[:, :, 2][:, None, None, :]]
        mask = valid[:, :, 0][:, :, None, None] & valid[:, :, 1][:, None, :, None] & valid[:, :, 2][:, None, None, :]
        padded = np.zeros((pts.shape[0], m + 2, m + 2, m + 2))
        padded[:, 1:-1, 1:-1, 1:-1] = np.where(mask, block, 0.0)
        corners = lo[:, None, :] + np.arange(m + 1)[None, :, None]
        q = (pts[:, None, :] - corners * s) / width
        return padded, q

    def _rho_chunk(self, pts: np.ndarray) -> np.ndarray:
        padded, q = self._local_block(pts)
        # corner differences in y, z for every x slab of the window
        corner = np.diff(np.diff(padded[:, 1:-1], axis=2), axis=3)
        upper = np.clip(q[:, :-1, 0], -1.0, 1.0)
        lower = np.clip(q[:, 1:, 0], -1.0, 1.0)
        t, wt = self._slab_rule
        z = lower[..., None] + (upper - lower)[..., None] * t
        weights = (upper - lower)[..., None] * wt
        rect = _signed_rectangle(z[..., None, None],
                                 q[:, :, 1][:, None, None, :, None],
                                 q[:, :, 2][:, None, None, None, :])
        return BUMP_NORM * np.einsum("tmn,tmab,tmnab->t", weights, corner, rect)

    def _grad_chunk(self, pts: np.ndarray) -> np.ndarray:
        padded, q = self._local_block(pts)
        corner = np.diff(np.diff(np.diff(padded, axis=1), axis=2), axis=3)
        qx = q[:, :, 0][:, :, None, None]
        qy = q[:, :, 1][:, None, :, None]
        qz = q[:, :, 2][:, None, None, :]
        out = np.empty(pts.shape)
        for axis, (z, p, r) in enumerate(((qx, qy, qz), (qy, qx, qz), (qz, qx, qy))):
            out[:, axis] = np.einsum("tijk,tijk->t", corner, _signed_rectangle(z, p, r))
        return BUMP_NORM / float(self.mollifier_width) * out

    def _chunk_size(self) -> int:
        m = self._window
        per_target = m * self.slab_nodes * (m + 1) ** 2
        return max(1, MOLLIFIER_CHUNK * 576 // per_target)

    def _in_support(self, pts: np.ndarray) -> np.ndarray:
        lo, hi = self.support_box()
        return np.all((pts > lo) & (pts < hi), axis=1)

    def rho(self, points) -> np.ndarray:
        """Mollified density (falls back to ρ^N when no mollifier is set)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if not self.is_mollified:
            return self.rho_n(pts)
        out = np.zeros(pts.shape[0])
        inside = self._in_support(pts)
        if np.any(inside):
            out[inside] = chunked_map(self._rho_chunk, pts[inside], chunk_size=self._chunk_size())
        return out

    def grad_rho(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        out = np.zeros_like(pts)
        if not self.is_mollified:
            return out
        inside = self._in_support(pts)
        if np.any(inside):
            out[inside] = chunked_map(self._grad_chunk, pts[inside], chunk_size=self._chunk_size())
        return out

    def mollified_mass(self) -> float:
        """∫ρ = ∫ρ^N · ∫η_w."""
        if not self.is_mollified:
            return self.coarse_mass()
        return self.coarse_mass() * bump_integral(float(self.mollifier_width))

    @property
    def lipschitz_constant(self) -> float:
        """sup|ρ^N − max ρ^N/2| · ∫|∇η_w|, valid since ∫∇η_w = 0."""
        if not self.is_mollified:
            return float("inf")
        return 0.5 * BUMP_GRADIENT_MASS * self.sup_norm / float(self.mollifier_width)

    # ── Export ──────────────────────────────────────────────────
    def to_csv(self, path: Union[str, Path]) -> Path:
        """Write "jx,jy,jz,count,rho" for every occupied cube."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["jx", "jy", "jz", "count", "rho"])
            for idx in np.argwhere(self.counts > 0):
                jx, jy, jz = idx + self.index_origin
                writer.writerow([int(jx), int(jy), int(jz), int(self.counts[tuple(idx)]),
                                 f"{self.rho_grid[tuple(idx)]:.17g}"])
        return path


def coarse_density(cfg: ParticleConfig, s: Optional[float] = None) -> DensityField:
    """Bin centres into half-open cubes of side s covering B_{L+1}(0)."""
    if s is None:
        s = default_cube_side(max(cfg.n_particles, 1))
    if not s > 0:
        raise GridError(f"Cube side must be positive, got {s}")
    reach = cfg.box_scale + 1.0
    lo = np.full(3, int(np.floor(-reach / s)), dtype=np.int64)
    hi = np.full(3, int(np.floor(reach / s)), dtype=np.int64)
    shape = tuple(hi - lo + 1)
    counts = np.zeros(shape, dtype=np.int64)
    if cfg.n_particles:
        idx = np.floor(cfg.centers / s).astype(np.int64) - lo
        np.add.at(counts, (idx[:, 0], idx[:, 1], idx[:, 2]), 1)
    grid = DensityField(s, lo, counts, cfg.n_particles)
    logger.debug(f"Coarse density: s={s:.4g}, {int((counts > 0).sum())} occupied cubes")
    return grid


def mollify_density(grid: DensityField, width: float, slab_nodes: int = 12) -> DensityField:
    """Return a copy of ``grid`` carrying ρ^N ∗ η_w for the quartic bump of width ``width``."""
    if not width > 0:
        raise GridError(f"Mollifier width must be positive, got {width}")
    if slab_nodes < MIN_SLAB_NODES:
        raise GridError(f"Need at least {MIN_SLAB_NODES} Gauss nodes per slab, got {slab_nodes}")
    rho = DensityField(grid.cube_side, grid.index_origin, grid.counts, grid.n_particles,
                       mollifier_width=float(width), slab_nodes=slab_nodes)
    logger.debug(f"Mollifier width {width:.4g}: {rho._window}³ cube window, {slab_nodes} nodes per slab")
    return rho
