"""
Homogenize — The homogenized velocity fields v̂, û and ū.

All three are convolution representations over the mollified density ρ:

    v̂ = Φ∗((1 − φρ)f)
    û = v̂ + L[5φρ·ev̂]
    ū = v̂ + L[βφρ·eū]          (fixed point, β = 5 for the Einstein coefficient)

with the stresslet layer L[g]_j(x) = ∫ g_ki(y) ∂_kΦ_ij(x − y) dy. Layer
sources live on a uniform grid over the support of ρ; convolutions use the
FFT engine of utils.convolution and layer strains are second-order finite
differences on that grid.
"""

import csv
import logging
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft

from models.motion import FixedPointTrace
from models.strain import project_strain
from models.study import HomogenizeOptions
from services.density import DensityField
from services.fields import (
    FlowField, ForceField, GridField, SumField, background_velocity, convolution_field,
)
from utils.convolution import KernelConvolver, UniformGrid, pack_symmetric
from utils.exceptions import NonContractive, QuadratureError

logger = logging.getLogger(__name__)

STALL_RATIO = 0.95
STALL_COUNT = 3
# every homogenized solve needs φ‖ρ‖∞ below this
LOAD_LIMIT = 0.4
# the ū fixed point needs φ‖ρ‖∞ at most this
CONTRACTION_HEADROOM = 0.1


class QuadratureGrid:
    """Uniform grid over the support of ρ (margin 2h) with ρ at the nodes."""

    def __init__(self, rho: DensityField, h: float):
        lo, hi = rho.support_box()
        self.grid = UniformGrid.covering(lo, hi, h, margin=2.0 * h)
        self.rho_nodes = rho.rho(self.grid.nodes).reshape(self.grid.shape)
        self.rho_nodes.setflags(write=False)
        logger.debug(f"Quadrature grid {self.grid.shape} with h={h:.4g}")

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @cached_property
    def oseen(self) -> KernelConvolver:
        return KernelConvolver(self.grid, "oseen")

    @cached_property
    def stresslet(self) -> KernelConvolver:
        return KernelConvolver(self.grid, "stresslet")

    @cached_property
    def coarse_grid(self) -> UniformGrid:
        """Every other node of the grid, spacing 2h."""
        return UniformGrid(self.grid.origin, 2.0 * self.grid.spacing,
                           tuple((n - 1) // 2 + 1 for n in self.grid.shape))

    def self_error(self, kind: str, source: np.ndarray, fine: np.ndarray) -> float:
        """Richardson estimate |I_h − I_2h| / 3 of a grid convolution, relative to its sup.

        I_2h convolves the source restricted to the coarse grid; both are
        compared on the shared nodes.
        """
        coarse = KernelConvolver(self.coarse_grid, kind).on_grid(source[::2, ::2, ::2])
        shared = fine[::2, ::2, ::2]
        if not (np.all(np.isfinite(shared)) and np.all(np.isfinite(coarse))):
            raise QuadratureError(f"Non-finite {kind} convolution on the {self.grid.shape} grid")
        scale = float(np.max(np.linalg.norm(shared, axis=-1)))
        if scale == 0.0:
            return 0.0
        return float(np.max(np.linalg.norm(shared - coarse, axis=-1))) / (3.0 * scale)


class HomogenizedField(SumField):
    """SumField that also carries its gradients at the quadrature nodes."""

    def __init__(self, terms: Sequence[Tuple[float, FlowField]], quadrature: QuadratureGrid,
                 node_gradients: np.ndarray, label: str, quadrature_error: float = 0.0):
        super().__init__(terms, label)
        self.quadrature = quadrature
        self.node_gradients = node_gradients
        self.quadrature_error = quadrature_error


def _check_load(rho: DensityField, opts: HomogenizeOptions) -> float:
    load = opts.phi * rho.sup_norm
    if load >= LOAD_LIMIT:
        raise ValueError(f"φ‖ρ‖∞ = {load:.3f} must stay below {LOAD_LIMIT}")
    return load


def _check_quadrature(error: float, opts: HomogenizeOptions, label: str) -> float:
    if not error <= opts.quad_tol:
        raise QuadratureError(f"{label}: estimated relative quadrature error {error:.3e} "
                              f"exceeds {opts.quad_tol:g} at h={opts.h:.4g}")
    logger.debug(f"{label}: estimated relative quadrature error {error:.3e}")
    return error


def _quadrature_for(fld: FlowField, rho: DensityField, opts: HomogenizeOptions) -> QuadratureGrid:
    q = getattr(fld, "quadrature", None)
    if isinstance(q, QuadratureGrid) and np.isclose(q.grid.spacing, opts.h):
        return q
    return QuadratureGrid(rho, opts.h)


def _node_gradients(fld: FlowField, q: QuadratureGrid) -> np.ndarray:
    g = getattr(fld, "node_gradients", None)
    if g is not None and getattr(fld, "quadrature", None) is q:
        return g
    return fld.gradient(q.nodes).reshape(q.grid.shape + (3, 3))


def _node_strains(gradients: np.ndarray) -> np.ndarray:
    return project_strain(gradients)


def _layer_source(q: QuadratureGrid, strains: np.ndarray, coefficient: float) -> np.ndarray:
    return (coefficient * q.rho_nodes)[..., None] * pack_symmetric(strains)


def _layer(q: QuadratureGrid, source: np.ndarray, threads: int, label: str) -> GridField:
    values = q.stresslet.on_grid(source)
    gradients = q.grid.strain_of(values)
    convolver = q.stresslet
    return GridField(q.grid, values, gradients,
                     far_value=lambda p: convolver.direct(source, p),
                     far_gradient=lambda p: convolver.direct(source, p, derivative=True).reshape(-1, 3, 3),
                     label=label, threads=threads)


# ── Solves ──────────────────────────────────────────────────────

def solve_hat_v(f: ForceField, rho: DensityField, opts: HomogenizeOptions) -> FlowField:
    """v̂ = v_free − φ·Φ∗(ρf)."""
    v_free = background_velocity(f, mode="full", threads=opts.threads)
    if opts.phi == 0.0 or rho.sup_norm == 0.0:
        return v_free
    _check_load(rho, opts)
    q = QuadratureGrid(rho, opts.h)
    source = q.rho_nodes[..., None] * f(q.nodes).reshape(q.grid.shape + (3,))
    correction = convolution_field(q.grid, source, convolver=q.oseen, label="rho_f", threads=opts.threads)
    error = _check_quadrature(q.self_error("oseen", source, correction.values), opts, "v̂")
    node_gradients = (v_free.gradient(q.nodes).reshape(q.grid.shape + (3, 3))
                      - opts.phi * correction.gradients)
    logger.debug(f"v̂ correction on {q.grid.shape} nodes, φ={opts.phi:.4g}")
    return HomogenizedField([(1.0, v_free), (-opts.phi, correction)], q, node_gradients, "v_hat", error)


def solve_hat_u(hat_v: FlowField, rho: DensityField, opts: HomogenizeOptions) -> FlowField:
    """û = v̂ + L[5φρ·ev̂]."""
    if opts.phi == 0.0 or rho.sup_norm == 0.0:
        return hat_v
    _check_load(rho, opts)
    q = _quadrature_for(hat_v, rho, opts)
    base = _node_gradients(hat_v, q)
    source = _layer_source(q, _node_strains(base), 5.0 * opts.phi)
    layer = _layer(q, source, opts.threads, "stresslet_layer")
    error = _check_quadrature(q.self_error("stresslet", source, layer.values), opts, "û")
    return HomogenizedField([(1.0, hat_v), (1.0, layer)], q, base + layer.gradients, "u_hat", error)


def solve_bar_u(f: ForceField, rho: DensityField, opts: HomogenizeOptions,
                beta: Optional[float] = None,
                hat_v: Optional[FlowField] = None) -> Tuple[FlowField, FixedPointTrace]:
    """Fixed point ū = v̂ + L[βφρ·eū] started from ū⁰ = v̂.

    Stops when the sup of successive strain differences on the grid is below
    ``opts.fixed_point_tol``; returns the last iterate after ``opts.max_iter``
    steps otherwise (trace flagged not converged). Requires φ‖ρ‖∞ ≤ 0.1.
    """
    beta = opts.beta if beta is None else float(beta)
    trace = FixedPointTrace()
    if opts.phi == 0.0 or rho.sup_norm == 0.0:
        trace.residuals.append(0.0)
        trace.converged = True
        return (hat_v if hat_v is not None else solve_hat_v(f, rho, opts)), trace

    load = _check_load(rho, opts)
    if load > CONTRACTION_HEADROOM:
        raise NonContractive(f"φ‖ρ‖∞ = {load:.3f} exceeds {CONTRACTION_HEADROOM}; "
                             f"the ū fixed point is not guaranteed to contract")
    hat_v = hat_v if hat_v is not None else solve_hat_v(f, rho, opts)

    q = _quadrature_for(hat_v, rho, opts)
    base = _node_gradients(hat_v, q)
    strains = _node_strains(base)
    coefficient = beta * opts.phi
    stalled = 0
    layer = source = None
    for m in range(1, opts.max_iter + 1):
        source = _layer_source(q, strains, coefficient)
        layer = _layer(q, source, opts.threads, "stresslet_layer")
        updated = _node_strains(base + layer.gradients)
        residual = float(np.max(np.linalg.norm(updated - strains, axis=(-2, -1))))
        trace.residuals.append(residual)
        strains = updated

        ratios = trace.ratios
        stalled = stalled + 1 if ratios and ratios[-1] >= STALL_RATIO else 0
        if stalled >= STALL_COUNT:
            raise NonContractive(f"Fixed point stalled: ratio ≥ {STALL_RATIO} for {STALL_COUNT} iterations "
                                 f"(β={beta:g}, φ‖ρ‖∞={load:.3f})")
        if residual <= opts.fixed_point_tol:
            trace.converged = True
            break

    if not trace.converged:
        logger.warning(f"ū fixed point stopped after {opts.max_iter} iterations "
                       f"(residual {trace.residuals[-1]:.3e})")
    else:
        logger.debug(f"ū fixed point converged in {trace.iterations} iterations (β={beta:g})")
    error = _check_quadrature(q.self_error("stresslet", source, layer.values), opts, "ū")
    bar_u = HomogenizedField([(1.0, hat_v), (1.0, layer)], q, base + layer.gradients, "u_bar", error)
    return bar_u, trace


# ── Diagnostics ─────────────────────────────────────────────────

def _leray_projection(field_nodes: np.ndarray, spacing: float) -> np.ndarray:
    """Divergence-free part of a grid vector field (periodic FFT Helmholtz split)."""
    shape = field_nodes.shape[:3]
    hat = fft.fftn(field_nodes, axes=(0, 1, 2))
    k = np.stack(np.meshgrid(*[fft.fftfreq(n, d=spacing) for n in shape], indexing="ij"), axis=-1)
    k2 = np.sum(k * k, axis=-1)
    k2[0, 0, 0] = 1.0
    hat = hat - k * (np.sum(k * hat, axis=-1) / k2)[..., None]
    return np.real(fft.ifftn(hat, axes=(0, 1, 2)))


def momentum_residual(bar_u: FlowField, f: ForceField, rho: DensityField, opts: HomogenizeOptions,
                      beta: Optional[float] = None, trim: int = 3) -> float:
    """sup of the Leray-projected −div((2 + βφρ)eū) − (1 − φρ)f on interior grid nodes.

    The pressure gradient is removed by the projection, so no pressure is needed.
    """
    beta = opts.beta if beta is None else float(beta)
    q = _quadrature_for(bar_u, rho, opts)
    grads = _node_gradients(bar_u, q)
    sym = 0.5 * (grads + np.swapaxes(grads, -1, -2))
    stress = (2.0 + beta * opts.phi * q.rho_nodes)[..., None, None] * sym
    h = q.grid.spacing
    div = np.zeros(q.grid.shape + (3,))
    for j in range(3):
        for k in range(3):
            div[..., j] += np.gradient(stress[..., j, k], h, axis=k, edge_order=2)
    force = f(q.nodes).reshape(q.grid.shape + (3,))
    residual = -div - (1.0 - opts.phi * q.rho_nodes)[..., None] * force
    projected = _leray_projection(residual, h)
    interior = projected[trim:-trim, trim:-trim, trim:-trim] if min(q.grid.shape) > 2 * trim else projected
    value = float(np.max(np.linalg.norm(interior, axis=-1)))
    logger.debug(f"Projected momentum residual {value:.3e} (force scale {float(np.max(np.abs(force))):.3e})")
    return value


def write_fixed_point_trace(trace: FixedPointTrace, path: Union[str, Path]) -> Path:
    """Write "m,residual,ratio" rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "residual", "ratio"])
        for m, residual, ratio in trace.rows():
            writer.writerow([m, f"{residual:.10g}", "nan" if np.isnan(ratio) else f"{ratio:.10g}"])
    return path
