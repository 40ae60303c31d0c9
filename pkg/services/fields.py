"""
Fields — Force densities, velocity fields and the explicit dipole approximation.

A FlowField is a pure evaluator of a velocity and its gradient. Fields are
composed into trees: analytic parts (manufactured solutions, rigid motions),
dipole sums, ball corrections computed by per-ball quadrature, and grid
convolutions. Evaluating the same field twice at the same points returns
bit-identical arrays.
"""

import csv
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from models.motion import RigidMotion
from models.particles import ParticleConfig
from models.strain import DipoleSet, SumPlan, project_strain
from services.summation import build_tree, sum_dipole_gradients, sum_dipoles
from utils.convolution import KernelConvolver, UniformGrid
from utils.exceptions import QuadratureError, StrainError
from utils.parallel import DEFAULT_CHUNK_SIZE, chunked_map
from utils.quadrature import ball_rule, gauss_legendre, lebedev_rule
from utils.stokes_kernels import SURFACE_SLACK, cross_matrix, oseen, oseen_grad, oseen_hessian

logger = logging.getLogger(__name__)

# Relative trace allowed in sampled strains before the field is rejected.
STRAIN_TRACE_TOLERANCE = 1e-6
# Ball corrections evaluate this many targets at a time (pairs × kernels stay small).
BALL_CHUNK = 64


def _points(points) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, 3)


def _scatter(index: np.ndarray, values: np.ndarray, size: int) -> np.ndarray:
    """Sum rows of ``values`` into ``size`` bins (fixed, index-ordered accumulation)."""
    flat = values.reshape(values.shape[0], -1)
    out = np.stack([np.bincount(index, weights=flat[:, c], minlength=size)
                    for c in range(flat.shape[1])], axis=-1)
    return out.reshape((size,) + values.shape[1:])


# ═══════════════════════════════════════════════════════════════
#  FORCE FIELDS
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class ForceField:
    """Compactly supported force density with optional exact Stokes solution."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    center: np.ndarray
    holder_exponent: float = 1.0
    holder_constant: float = float("inf")
    sup_norm: float = float("inf")
    exact_velocity: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    label: str = "force"

    def __post_init__(self):
        if not self.support_radius > 0:
            raise ValueError(f"support_radius must be positive, got {self.support_radius}")
        c = np.array(self.center, dtype=float).reshape(3)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    def __call__(self, points) -> np.ndarray:
        pts = _points(points)
        return self.evaluator(pts)

    @property
    def is_manufactured(self) -> bool:
        return self.exact_velocity is not None and self.exact_gradient is not None


def _bump_parameter(pts: np.ndarray, center: np.ndarray, width: float) -> Tuple[np.ndarray, np.ndarray]:
    z = pts - center
    t = np.clip(1.0 - np.sum(z * z, axis=1) / width ** 2, 0.0, None)
    return z, t


def manufactured_force(amplitude=(0.0, 0.0, 1.0), support_radius: float = 0.8,
                       center=(0.0, 0.0, 0.0)) -> ForceField:
    """Force f = −Δv0 for the divergence-free v0 = ∇ψ ∧ a, ψ = (1 − |x−c|²/w²)⁴.

    The free Stokes problem with right side f is solved by v0 with zero pressure.
    """
    if not support_radius > 0:
        raise ValueError(f"support_radius must be positive, got {support_radius}")
    a = np.array(amplitude, dtype=float).reshape(3)
    c = np.array(center, dtype=float).reshape(3)
    w = float(support_radius)
    a_cross = cross_matrix(a)

    def velocity(pts: np.ndarray) -> np.ndarray:
        z, t = _bump_parameter(_points(pts), c, w)
        return (-8.0 * t ** 3 / w ** 2)[:, None] * np.cross(z, a)

    def gradient(pts: np.ndarray) -> np.ndarray:
        z, t = _bump_parameter(_points(pts), c, w)
        hess = ((-8.0 * t ** 3 / w ** 2)[:, None, None] * np.eye(3)
                + (48.0 * t ** 2 / w ** 4)[:, None, None] * np.einsum("mi,mj->mij", z, z))
        return -np.einsum("ab,mbk->mak", a_cross, hess)

    def force(pts: np.ndarray) -> np.ndarray:
        z, t = _bump_parameter(_points(pts), c, w)
        return (-48.0 * t * (9.0 * t - 4.0) / w ** 4)[:, None] * np.cross(z, a)

    # |f| ≤ 48|a| t|9t−4|·r/w⁴ with r = w√(1−t); maximise over t.
    ts = np.linspace(0.0, 1.0, 20001)
    sup = 48.0 * np.linalg.norm(a) / w ** 3 * float(np.max(ts * np.abs(9.0 * ts - 4.0) * np.sqrt(1.0 - ts)))
    lipschitz = _sampled_lipschitz(force, c, w)
    return ForceField(force, w, c, holder_exponent=1.0, holder_constant=lipschitz, sup_norm=sup,
                      exact_velocity=velocity, exact_gradient=gradient, label="manufactured")


def _sampled_lipschitz(force: Callable[[np.ndarray], np.ndarray], center: np.ndarray, width: float,
                       n: int = 9, step: float = 1e-4) -> float:
    axis = np.linspace(-width, width, n)
    pts = center + np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    base = force(pts)
    slopes = [np.linalg.norm(force(pts + step * e) - base, axis=1) / step for e in np.eye(3)]
    return float(np.max(slopes))


# ═══════════════════════════════════════════════════════════════
#  FLOW FIELDS
# ═══════════════════════════════════════════════════════════════

class FlowField:
    """Velocity evaluator with gradient; subclasses implement value and gradient."""

    label = "field"

    def value(self, points) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, points) -> np.ndarray:
        """∂_k u_j indexed [..., j, k]."""
        raise NotImplementedError

    def symmetric_gradient(self, points) -> np.ndarray:
        g = self.gradient(points)
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    def pressure(self, points) -> Optional[np.ndarray]:
        return None

    def describe(self) -> str:
        return self.label


class ZeroField(FlowField):
    label = "zero"

    def value(self, points) -> np.ndarray:
        return np.zeros((_points(points).shape[0], 3))

    def gradient(self, points) -> np.ndarray:
        return np.zeros((_points(points).shape[0], 3, 3))

    def pressure(self, points) -> np.ndarray:
        return np.zeros(_points(points).shape[0])


class AnalyticField(FlowField):
    def __init__(self, value_fn: Callable, gradient_fn: Callable,
                 pressure_fn: Optional[Callable] = None, label: str = "analytic"):
        self._value_fn = value_fn
        self._gradient_fn = gradient_fn
        self._pressure_fn = pressure_fn
        self.label = label

    def value(self, points) -> np.ndarray:
        return self._value_fn(_points(points))

    def gradient(self, points) -> np.ndarray:
        return self._gradient_fn(_points(points))

    def pressure(self, points) -> Optional[np.ndarray]:
        if self._pressure_fn is None:
            return None
        return self._pressure_fn(_points(points))


class RigidField(FlowField):
    """V + ω∧(x − X) everywhere."""

    def __init__(self, motion: RigidMotion):
        self.motion = motion
        self.label = "rigid"

    def value(self, points) -> np.ndarray:
        return self.motion.evaluate(_points(points))

    def gradient(self, points) -> np.ndarray:
        n = _points(points).shape[0]
        return np.broadcast_to(cross_matrix(self.motion.omega), (n, 3, 3)).copy()

    def pressure(self, points) -> np.ndarray:
        return np.zeros(_points(points).shape[0])


class SumField(FlowField):
    """Σ c_k · field_k."""

    def __init__(self, terms: Sequence[Tuple[float, FlowField]], label: str = "sum"):
        self.terms = tuple((float(c), f) for c, f in terms)
        self.label = label

    def value(self, points) -> np.ndarray:
        pts = _points(points)
        out = np.zeros((pts.shape[0], 3))
        for coeff, fld in self.terms:
            out = out + coeff * fld.value(pts)
        return out

    def gradient(self, points) -> np.ndarray:
        pts = _points(points)
        out = np.zeros((pts.shape[0], 3, 3))
        for coeff, fld in self.terms:
            out = out + coeff * fld.gradient(pts)
        return out

    def pressure(self, points) -> Optional[np.ndarray]:
        parts = [(c, f.pressure(points)) for c, f in self.terms]
        if any(p is None for _, p in parts):
            return None
        return sum(c * p for c, p in parts)

    def describe(self) -> str:
        inner = " + ".join(f"{c:g}·{f.describe()}" for c, f in self.terms)
        return f"{self.label}({inner})"


class DipoleCorrectedField(FlowField):
    """base − Σ_i d_i[ε_i] for one strain per particle (particle order kept).

    Dipoles with strain norm below 1e-14 are skipped. Successive reflections
    add to the strains, since each dipole is linear in its strain.
    """

    def __init__(self, base: FlowField, centers: np.ndarray, radius: float, strains: np.ndarray,
                 plan: Optional[SumPlan] = None, label: str = "dipole_corrected"):
        self.base = base
        self.radius = float(radius)
        self.plan = plan or SumPlan()
        self.particle_centers = np.array(centers, dtype=float).reshape(-1, 3)
        self.particle_centers.setflags(write=False)
        self.strains = np.array(strains, dtype=float).reshape(-1, 3, 3)
        self.strains.setflags(write=False)
        self.dipoles = DipoleSet(centers, radius, self.strains).active()
        skipped = self.strains.shape[0] - len(self.dipoles)
        if skipped:
            logger.debug(f"Skipped {skipped} dipoles with vanishing strain")
        self._tree = None
        if self.plan.method == "tree" and len(self.dipoles) > self.plan.leaf_size:
            self._tree = build_tree(self.dipoles, self.plan)
        self.label = label

    @property
    def centers(self) -> np.ndarray:
        return self.dipoles.centers

    def value(self, points) -> np.ndarray:
        pts = _points(points)
        base = self.base.value(pts)
        if len(self.dipoles) == 0:
            return base
        return base - sum_dipoles(self.dipoles, pts, self.plan, self._tree)

    def gradient(self, points) -> np.ndarray:
        pts = _points(points)
        base = self.base.gradient(pts)
        if len(self.dipoles) == 0:
            return base
        return base - sum_dipole_gradients(self.dipoles, pts, self.plan)

    def describe(self) -> str:
        return f"{self.base.describe()} − Σd[{len(self.dipoles)}]"


class BallCorrectionField(FlowField):
    """Σ_i Φ∗(𝟙_{B_i} f) over the balls meeting the support of f.

    Targets inside a ball use radial substitution about the target; targets
    within ``far_ratio``·R use the ball product rule; farther targets use the
    monopole and first moment of f over the ball.
    """

    def __init__(self, force: ForceField, cfg: ParticleConfig, radial_order: int = 8,
                 angular_order: int = 26, far_ratio: float = 6.0, tolerance: Optional[float] = None,
                 threads: int = 1):
        self.force = force
        self.radius = float(cfg.radius)
        self.far_ratio = float(far_ratio)
        self.threads = int(threads)
        self.label = "ball_corrections"
        if cfg.n_particles:
            reach = np.linalg.norm(cfg.centers - force.center, axis=1)
            self.centers = np.array(cfg.centers[reach < force.support_radius + self.radius])
        else:
            self.centers = np.zeros((0, 3))

        self._offsets, self._weights = ball_rule(self.radius, radial_order, angular_order)
        nodes = self.centers[:, None, :] + self._offsets[None, :, :]
        k, m = self.centers.shape[0], self._offsets.shape[0]
        self._node_forces = force(nodes.reshape(-1, 3)).reshape(k, m, 3)
        self._m0 = np.einsum("m,kmj->kj", self._weights, self._node_forces)
        self._m1 = np.einsum("m,kmj,ml->kjl", self._weights, self._node_forces, self._offsets)
        self._radial = gauss_legendre(radial_order, 0.0, 1.0)
        self._dirs, self._dir_weights = lebedev_rule(angular_order)
        self._dir_oseen = oseen(self._dirs)
        self._dir_grad = oseen_grad(self._dirs)
        if tolerance is not None:
            self._check_quadrature(tolerance, radial_order)
        logger.debug(f"Ball corrections on {k} of {cfg.n_particles} balls ({m} nodes each)")

    def _check_quadrature(self, tolerance: float, radial_order: int):
        if self.centers.shape[0] == 0:
            return
        offsets, weights = ball_rule(self.radius, max(2, radial_order // 2), 14)
        nodes = (self.centers[:, None, :] + offsets[None]).reshape(-1, 3)
        coarse = np.einsum("m,kmj->kj", weights, self.force(nodes).reshape(self.centers.shape[0], -1, 3))
        scale = max(float(np.max(np.abs(self._m0))), 1e-300)
        estimate = float(np.max(np.abs(coarse - self._m0))) / scale
        if not np.isfinite(estimate) or estimate > tolerance:
            raise QuadratureError(f"Ball quadrature error estimate {estimate:.3e} exceeds {tolerance:g}")

    def _branches(self, pts: np.ndarray):
        d = pts[:, None, :] - self.centers[None, :, :]
        dist = np.linalg.norm(d, axis=2)
        inside = dist <= self.radius * (1.0 + SURFACE_SLACK)
        far = dist >= self.far_ratio * self.radius
        near = ~inside & ~far
        return d, inside, near, far

    def _radial_nodes(self, pts: np.ndarray, pi: np.ndarray, ki: np.ndarray):
        """Nodes x + tω reaching the sphere along every direction, and their weights."""
        r = pts[pi] - self.centers[ki]
        b = r @ self._dirs.T
        c = np.sum(r * r, axis=1) - self.radius ** 2
        reach = np.clip(-b + np.sqrt(np.clip(b * b - c[:, None], 0.0, None)), 0.0, None)
        u, wu = self._radial
        t = reach[:, :, None] * u[None, None, :]
        weights = 4.0 * np.pi * self._dir_weights[None, :, None] * reach[:, :, None] * wu[None, None, :]
        nodes = pts[pi][:, None, None, :] + t[..., None] * self._dirs[None, :, None, :]
        forces = self.force(nodes.reshape(-1, 3)).reshape(nodes.shape)
        return t, weights, forces

    def _value_chunk(self, pts: np.ndarray) -> np.ndarray:
        n = pts.shape[0]
        out = np.zeros((n, 3))
        if self.centers.shape[0] == 0 or n == 0:
            return out
        d, inside, near, far = self._branches(pts)

        pi, ki = np.nonzero(far)
        if pi.size:
            dv = d[pi, ki]
            val = (np.einsum("qij,qj->qi", oseen(dv), self._m0[ki])
                   - np.einsum("qijl,qjl->qi", oseen_grad(dv), self._m1[ki]))
            out += _scatter(pi, val, n)

        pi, ki = np.nonzero(near)
        if pi.size:
            diff = pts[pi][:, None, :] - (self.centers[ki][:, None, :] + self._offsets[None])
            kern = oseen(diff.reshape(-1, 3)).reshape(diff.shape[:2] + (3, 3))
            val = np.einsum("qmij,qmj,m->qi", kern, self._node_forces[ki], self._weights)
            out += _scatter(pi, val, n)

        pi, ki = np.nonzero(inside)
        if pi.size:
            t, weights, forces = self._radial_nodes(pts, pi, ki)
            val = np.einsum("qan,aij,qanj->qi", weights * t, self._dir_oseen, forces)
            out += _scatter(pi, val, n)
        return out

    def _gradient_chunk(self, pts: np.ndarray) -> np.ndarray:
        n = pts.shape[0]
        out = np.zeros((n, 3, 3))
        if self.centers.shape[0] == 0 or n == 0:
            return out
        d, inside, near, far = self._branches(pts)

        pi, ki = np.nonzero(far)
        if pi.size:
            dv = d[pi, ki]
            val = (np.einsum("qijk,qj->qik", oseen_grad(dv), self._m0[ki])
                   - np.einsum("qijlk,qjl->qik", oseen_hessian(dv), self._m1[ki]))
            out += _scatter(pi, val, n)

        pi, ki = np.nonzero(near)
        if pi.size:
            diff = pts[pi][:, None, :] - (self.centers[ki][:, None, :] + self._offsets[None])
            kern = oseen_grad(diff.reshape(-1, 3)).reshape(diff.shape[:2] + (3, 3, 3))
            val = np.einsum("qmijk,qmj,m->qik", kern, self._node_forces[ki], self._weights)
            out += _scatter(pi, val, n)

        pi, ki = np.nonzero(inside)
        if pi.size:
            _, weights, forces = self._radial_nodes(pts, pi, ki)
            val = -np.einsum("qan,aijk,qanj->qik", weights, self._dir_grad, forces)
            out += _scatter(pi, val, n)
        return out

    def value(self, points) -> np.ndarray:
        out = chunked_map(self._value_chunk, _points(points), self.threads, BALL_CHUNK)
        if not np.all(np.isfinite(out)):
            raise QuadratureError("Non-finite ball correction values")
        return out

    def gradient(self, points) -> np.ndarray:
        out = chunked_map(self._gradient_chunk, _points(points), self.threads, BALL_CHUNK)
        if not np.all(np.isfinite(out)):
            raise QuadratureError("Non-finite ball correction gradients")
        return out


class GridField(FlowField):
    """Node values and gradients on a UniformGrid.

    Inside the grid box the nodes are interpolated with cubic splines; outside
    it the supplied far-field evaluators are used.
    """

    def __init__(self, grid: UniformGrid, values: np.ndarray, gradients: np.ndarray,
                 far_value: Callable[[np.ndarray], np.ndarray],
                 far_gradient: Callable[[np.ndarray], np.ndarray], label: str = "grid",
                 threads: int = 1):
        self.grid = grid
        self.values = values
        self.gradients = gradients
        self._far_value = far_value
        self._far_gradient = far_gradient
        self.threads = int(threads)
        self.label = label

    @cached_property
    def _value_spline(self) -> np.ndarray:
        return self.grid.spline(self.values)

    @cached_property
    def _gradient_spline(self) -> np.ndarray:
        return self.grid.spline(self.gradients.reshape(self.grid.shape + (9,)))

    def _evaluate(self, pts: np.ndarray, spline: np.ndarray, far: Callable, width: int) -> np.ndarray:
        out = np.zeros((pts.shape[0], width))
        inside = self.grid.contains(pts)
        if np.any(inside):
            out[inside] = self.grid.interpolate(spline, pts[inside])
        if np.any(~inside):
            out[~inside] = chunked_map(far, pts[~inside], self.threads, DEFAULT_CHUNK_SIZE).reshape(-1, width)
        return out

    def value(self, points) -> np.ndarray:
        return self._evaluate(_points(points), self._value_spline, self._far_value, 3)

    def gradient(self, points) -> np.ndarray:
        out = self._evaluate(_points(points), self._gradient_spline, self._far_gradient, 9)
        return out.reshape(-1, 3, 3)


def convolution_field(grid: UniformGrid, source: np.ndarray, kind: str = "oseen",
                      convolver: Optional[KernelConvolver] = None, label: str = "convolution",
                      gradients: Optional[np.ndarray] = None, threads: int = 1) -> GridField:
    """∫K(x−y)g(y)dy for node values ``source`` (FFT on the grid, direct sums outside it).

    Gradients default to the FFT of the differentiated kernel; pass
    ``gradients`` to override them on the grid.
    """
    convolver = convolver or KernelConvolver(grid, kind)
    values = convolver.on_grid(source)
    if gradients is None:
        gradients = convolver.on_grid(source, derivative=True).reshape(grid.shape + (3, 3))
    return GridField(grid, values, gradients,
                     far_value=lambda p: convolver.direct(source, p),
                     far_gradient=lambda p: convolver.direct(source, p, derivative=True).reshape(-1, 3, 3),
                     label=label, threads=threads)


# ═══════════════════════════════════════════════════════════════
#  BACKGROUND VELOCITY
# ═══════════════════════════════════════════════════════════════

def _full_background(f: ForceField, grid_spacing: Optional[float], threads: int) -> FlowField:
    if f.is_manufactured:
        return AnalyticField(f.exact_velocity, f.exact_gradient,
                             pressure_fn=lambda p: np.zeros(p.shape[0]), label="v0")
    h = grid_spacing or f.support_radius / 16.0
    grid = UniformGrid.covering(f.center - f.support_radius, f.center + f.support_radius, h, margin=2.0 * h)
    source = f(grid.nodes).reshape(grid.shape + (3,))
    logger.info(f"Numeric background velocity on a {grid.shape} grid (h={h:.4g})")
    return convolution_field(grid, source, "oseen", label="v_numeric", threads=threads)


def background_velocity(f: ForceField, cfg: Optional[ParticleConfig] = None, mode: str = "full",
                        radial_order: int = 8, angular_order: int = 26, far_ratio: float = 6.0,
                        tolerance: Optional[float] = None, grid_spacing: Optional[float] = None,
                        threads: int = 1) -> FlowField:
    """v = Φ∗f (mode "full") or Φ∗(𝟙_Ω f) = v_full − Σ_i Φ∗(𝟙_{B_i} f) (mode "punctured")."""
    full = _full_background(f, grid_spacing, threads)
    if mode == "full":
        return full
    if mode != "punctured":
        raise ValueError(f"Unknown background mode '{mode}'")
    if cfg is None:
        raise ValueError("Punctured background requires a particle configuration")
    corrections = BallCorrectionField(f, cfg, radial_order, angular_order, far_ratio, tolerance, threads)
    return SumField([(1.0, full), (-1.0, corrections)], label="v_punctured")


# ═══════════════════════════════════════════════════════════════
#  STRAINS AND THE DIPOLE APPROXIMATION
# ═══════════════════════════════════════════════════════════════

@dataclass
class StrainSample:
    """Trace-projected strains per particle with surface diagnostics."""

    strains: np.ndarray
    surface_max: np.ndarray
    trace_deviation: float
    mode: str = "surface_avg"

    @property
    def averaged_norms(self) -> np.ndarray:
        return np.linalg.norm(self.strains, axis=(1, 2))


def sample_strains(fld: FlowField, cfg: ParticleConfig, mode: str = "surface_avg",
                   quad_order: int = 26) -> StrainSample:
    """ev(X_i) (mode "point") or the sphere average of ev over ∂B_i (mode "surface_avg")."""
    n = cfg.n_particles
    if n == 0:
        return StrainSample(np.zeros((0, 3, 3)), np.zeros(0), 0.0, mode)
    if mode == "point":
        grads = fld.gradient(cfg.centers)[:, None]
        weights = np.ones(1)
    elif mode == "surface_avg":
        dirs, weights = lebedev_rule(quad_order)
        pts = (cfg.centers[:, None, :] + cfg.radius * dirs[None]).reshape(-1, 3)
        grads = fld.gradient(pts).reshape(n, len(weights), 3, 3)
    else:
        raise ValueError(f"Unknown strain mode '{mode}'")

    sym = 0.5 * (grads + np.swapaxes(grads, -1, -2))
    averaged = np.einsum("m,nmab->nab", weights, sym)
    scale = max(float(np.max(np.linalg.norm(grads, axis=(2, 3)))), np.finfo(float).tiny)
    deviation = float(np.max(np.abs(np.trace(averaged, axis1=1, axis2=2)))) / scale
    if deviation > STRAIN_TRACE_TOLERANCE:
        raise StrainError(f"Sampled strain has relative trace {deviation:.3e}; field not divergence-free near particles")
    projected = project_strain(averaged)
    surface_max = np.max(np.linalg.norm(project_strain(sym), axis=(2, 3)), axis=1)
    return StrainSample(projected, surface_max, deviation, mode)


def strain_at_centers(fld: FlowField, cfg: ParticleConfig, mode: str = "surface_avg",
                      quad_order: int = 26) -> np.ndarray:
    """Per-particle symmetric trace-free strains, shape (N, 3, 3)."""
    sample = sample_strains(fld, cfg, mode, quad_order)
    logger.debug(f"Strains ({mode}) for {cfg.n_particles} particles, trace deviation {sample.trace_deviation:.2e}")
    return sample.strains


def explicit_dipole_approx(v: FlowField, cfg: ParticleConfig, strains,
                           plan: Optional[SumPlan] = None) -> DipoleCorrectedField:
    """ũ = v − Σ_i d_i[ε_i]."""
    strains = np.asarray(strains, dtype=float).reshape(-1, 3, 3)
    if strains.shape[0] != cfg.n_particles:
        raise ValueError(f"Expected {cfg.n_particles} strains, got {strains.shape[0]}")
    return DipoleCorrectedField(v, cfg.centers, cfg.radius, strains, plan, label="u_tilde")


# ═══════════════════════════════════════════════════════════════
#  DIAGNOSTICS
# ═══════════════════════════════════════════════════════════════

def gradient_oscillation(fld: FlowField, cfg: ParticleConfig, radii: Iterable[float],
                         quad_order: int = 26) -> Dict[float, float]:
    """max_i max_{|x−X_i|=a} |∇v(X_i) − ∇v(x)| for every radius a."""
    dirs, _ = lebedev_rule(quad_order)
    at_centers = fld.gradient(cfg.centers)
    out: Dict[float, float] = {}
    for a in radii:
        pts = (cfg.centers[:, None, :] + float(a) * dirs[None]).reshape(-1, 3)
        grads = fld.gradient(pts).reshape(cfg.n_particles, len(dirs), 3, 3)
        diff = np.linalg.norm(grads - at_centers[:, None], axis=(2, 3))
        out[float(a)] = float(np.max(diff)) if diff.size else 0.0
    return out


def _shifted_values(fld, pts: np.ndarray, step: float) -> Tuple[np.ndarray, np.ndarray]:
    evaluate = fld.value if isinstance(fld, FlowField) else fld
    shifts = step * np.eye(3)
    plus = evaluate((pts[:, None, :] + shifts[None]).reshape(-1, 3)).reshape(-1, 3, 3)
    minus = evaluate((pts[:, None, :] - shifts[None]).reshape(-1, 3)).reshape(-1, 3, 3)
    return plus, minus


def finite_difference_gradient(fld, points, step: float = 1e-5) -> np.ndarray:
    """Central differences of a FlowField (or value callable), indexed [m, j, k]."""
    plus, minus = _shifted_values(fld, _points(points), step)
    return np.swapaxes((plus - minus) / (2.0 * step), 1, 2)


def finite_difference_laplacian(fld, points, step: float = 1e-3) -> np.ndarray:
    pts = _points(points)
    evaluate = fld.value if isinstance(fld, FlowField) else fld
    plus, minus = _shifted_values(fld, pts, step)
    centre = evaluate(pts)
    return (np.sum(plus + minus, axis=1) - 6.0 * centre) / step ** 2


def finite_difference_divergence(fld, points, step: float = 1e-5) -> np.ndarray:
    return np.trace(finite_difference_gradient(fld, points, step), axis1=1, axis2=2)


def momentum_residual_exterior(fld, points, step: float = 1e-2) -> np.ndarray:
    """|curl Δu| by nested central differences (zero for any Stokes flow)."""
    pts = _points(points)
    shifts = step * np.eye(3)
    lap_plus = finite_difference_laplacian(fld, (pts[:, None] + shifts[None]).reshape(-1, 3), step)
    lap_minus = finite_difference_laplacian(fld, (pts[:, None] - shifts[None]).reshape(-1, 3), step)
    # d[m, k, n] = ∂_k (Δu)_n
    d = (lap_plus - lap_minus).reshape(-1, 3, 3) / (2.0 * step)
    curl = np.stack([d[:, 1, 2] - d[:, 2, 1], d[:, 2, 0] - d[:, 0, 2], d[:, 0, 1] - d[:, 1, 0]], axis=1)
    return np.linalg.norm(curl, axis=1)


# ═══════════════════════════════════════════════════════════════
#  CSV EXPORT
# ═══════════════════════════════════════════════════════════════

def write_field_samples(fld: FlowField, points, path: Union[str, Path]) -> Path:
    """Write "x,y,z,ux,uy,uz" rows for ``points``."""
    pts = _points(points)
    values = fld.value(pts)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z", "ux", "uy", "uz"])
        for p, u in zip(pts, values):
            writer.writerow([f"{v:.17g}" for v in (*p, *u)])
    return path


def read_field_samples(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    data = _read_numeric_csv(path, ["x", "y", "z", "ux", "uy", "uz"])
    return data[:, :3], data[:, 3:]


def write_sample_points(points, path: Union[str, Path]) -> Path:
    pts = _points(points)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z"])
        for p in pts:
            writer.writerow([f"{v:.17g}" for v in p])
    return path


def read_sample_points(path: Union[str, Path]) -> np.ndarray:
    return _read_numeric_csv(path, ["x", "y", "z"])


def _read_numeric_csv(path: Union[str, Path], header: List[str]) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != header:
        raise ValueError(f"{path}: expected header {','.join(header)}")
    data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    return data.reshape(-1, len(header))
