"""
Microscopic Stage — Background velocity with the particles cut out, the
method of reflections and the explicit dipole approximation ũ.
"""

import logging
from pathlib import Path
from typing import Any, Dict

from config.run_config import RunConfig
from config.settings import Settings
from models.study import EntryState
from services.fields import background_velocity, explicit_dipole_approx, strain_at_centers
from services.reflections import reflect_until, write_trace_csv

logger = logging.getLogger(__name__)


class MicroscopicStage:
    """Computes v = Φ∗f^N, the reflected approximation u ≈ v_k and ũ."""

    def __init__(self, run_config: RunConfig, settings: Settings):
        self.run_config = run_config
        self.settings = settings

    def process(self, state: EntryState) -> Dict[str, Any]:
        """Main processing function for the microscopic stage."""
        try:
            cfg = state["particles"]
            f = state["force"]
            quad = self.run_config.values["quadrature"]
            tol = self.run_config.values["tolerances"]
            plan = self.run_config.sum_plan(self.settings.THREADS, self.settings.CHUNK_SIZE)

            v = background_velocity(f, cfg, "punctured", quad["ball_radial_order"], quad["angular_order"],
                                    quad["far_ratio"], threads=self.settings.THREADS)
            u_approx, trace = reflect_until(v, cfg, tol["reflect_tol"], tol["reflect_max_iter"], plan,
                                            quad["strain_mode"], quad["angular_order"])
            strains = strain_at_centers(v, cfg, "point")
            u_tilde = explicit_dipole_approx(v, cfg, strains, plan)

            if state.get("output_dir"):
                write_trace_csv(trace, Path(state["output_dir"]) / f"reflections_N{cfg.n_particles}.csv")
            ratios = trace.ratios
            mean_ratio = sum(ratios) / len(ratios) if ratios else float("nan")
            return {
                "v_punctured": v,
                "reflection": trace,
                "u_approx": u_approx,
                "u_tilde": u_tilde,
                "messages": [
                    f"Microscopic: {trace.iterations} reflections, mean ratio {mean_ratio:.3g}",
                ],
            }

        except Exception as e:
            logger.error(f"Error in microscopic stage: {e}")
            return {"error": f"microscopic: {e}", "messages": [f"Microscopic: failed - {e}"]}
