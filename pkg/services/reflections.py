"""
Reflections — Rigid projections on spheres and the method of reflections.

Each reflection removes from the current field the straining part it shows on
every sphere, using the stresslet dipole with the surface-averaged strain:
v_{k+1} = v_k − Σ_i d_i[ε_i(v_k)]. Since dipoles are linear in the strain,
the iterate is kept as the base field minus one dipole per particle whose
strain accumulates over the steps.
"""

import csv
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from models.motion import ResidualTrace, RigidMotion
from models.particles import ParticleConfig
from models.strain import SumPlan
from services.fields import DipoleCorrectedField, FlowField, sample_strains
from utils.exceptions import ContractivityError, NonConvergence, QuadratureError
from utils.quadrature import lebedev_rule

logger = logging.getLogger(__name__)

GROWTH_LIMIT = 10.0
STALL_RATIO = 0.9


def rigid_projection(fld: FlowField, center, R: float, quad_order: int = 26) -> RigidMotion:
    """V = ⨍ w dS and ω = (3/2R²)⨍ (x−X)∧w dS over ∂B_R(center)."""
    center = np.asarray(center, dtype=float).reshape(3)
    dirs, weights = lebedev_rule(quad_order)
    offsets = R * dirs
    w = fld.value(center + offsets)
    if not np.all(np.isfinite(w)):
        raise QuadratureError(f"Non-finite field values on the sphere around {center}")
    velocity = weights @ w
    omega = 1.5 / R ** 2 * (weights @ np.cross(offsets, w))
    return RigidMotion(velocity, omega, center)


def reflection_step(fld: FlowField, cfg: ParticleConfig, plan: Optional[SumPlan] = None,
                    strain_mode: str = "surface_avg", quad_order: int = 26,
                    previous_residual: Optional[float] = None) -> Tuple[FlowField, np.ndarray, np.ndarray]:
    """One reflection: returns (new field, averaged residuals, surface residuals) per particle.

    Residuals are those of the field before the step.
    """
    sample = sample_strains(fld, cfg, strain_mode, quad_order)
    residuals = sample.averaged_norms
    current = float(np.max(residuals)) if residuals.size else 0.0
    if previous_residual is not None and previous_residual > 0 and current > GROWTH_LIMIT * previous_residual:
        raise ContractivityError(
            f"Reflection residual grew from {previous_residual:.3e} to {current:.3e}; "
            f"configuration is outside the contraction regime"
        )

    if isinstance(fld, DipoleCorrectedField) and np.array_equal(fld.particle_centers, cfg.centers):
        base, strains = fld.base, fld.strains + sample.strains
        plan = plan or fld.plan
    else:
        base, strains = fld, sample.strains
    new_field = DipoleCorrectedField(base, cfg.centers, cfg.radius, strains, plan, label="reflected")
    return new_field, residuals, sample.surface_max


def reflect_until(fld: FlowField, cfg: ParticleConfig, tol: float = 1e-6, k_max: int = 10,
                  plan: Optional[SumPlan] = None, strain_mode: str = "surface_avg",
                  quad_order: int = 26) -> Tuple[FlowField, ResidualTrace]:
    """Iterate reflections until the residual falls below tol × the initial one.

    The residual is the maximum over particles of the surface-averaged strain.
    """
    trace = ResidualTrace()
    if tol >= 1.0 or cfg.n_particles == 0:
        trace.converged = True
        return fld, trace

    current = fld
    previous: Optional[float] = None
    initial: Optional[float] = None
    for k in range(k_max + 1):
        stepped, residuals, surface = reflection_step(current, cfg, plan, strain_mode, quad_order, previous)
        value = float(np.max(residuals))
        trace.residuals.append(value)
        trace.surface_residuals.append(float(np.max(surface)))
        if initial is None:
            initial = value
        logger.debug(f"Reflection {k}: residual {value:.3e} (surface max {trace.surface_residuals[-1]:.3e})")
        if value <= tol * initial or value == 0.0:
            trace.converged = True
            break
        if k == k_max:
            break
        current, previous = stepped, value

    if not trace.converged:
        ratio = trace.ratios[-1] if trace.ratios else 0.0
        if ratio >= STALL_RATIO:
            raise NonConvergence(
                f"Reflections stalled after {k_max} steps (last ratio {ratio:.3f}, residual {trace.residuals[-1]:.3e})"
            )
        logger.warning(f"Reflections stopped at k_max={k_max} with ratio {ratio:.3f}")
    logger.info(f"Reflections: {trace.iterations} steps, final residual {trace.residuals[-1]:.3e}")
    return current, trace


def write_trace_csv(trace: ResidualTrace, path: Union[str, Path]) -> Path:
    """Write "k,residual,ratio" rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "residual", "ratio"])
        for k, residual, ratio in trace.rows():
            writer.writerow([k, f"{residual:.10g}", "nan" if np.isnan(ratio) else f"{ratio:.10g}"])
    return path
