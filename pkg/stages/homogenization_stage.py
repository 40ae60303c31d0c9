"""
Homogenization Stage — Coarse density, mollification and the homogenized
fields v̂, û and ū of one schedule entry.
"""

import logging
from pathlib import Path
from typing import Any, Dict

from config.run_config import RunConfig
from config.settings import Settings
from models.study import EntryState, HomogenizeOptions
from services.density import coarse_density, mollify_density
from services.homogenize import solve_bar_u, solve_hat_u, solve_hat_v, write_fixed_point_trace

logger = logging.getLogger(__name__)


class HomogenizationStage:
    """Builds ρ from the particles and solves for v̂, û and ū."""

    def __init__(self, run_config: RunConfig, settings: Settings):
        self.run_config = run_config
        self.settings = settings

    def options(self, state: EntryState) -> HomogenizeOptions:
        tol = self.run_config.values["tolerances"]
        quad = self.run_config.values["quadrature"]
        cube_side = state["metadata"]["cube_side"]
        return HomogenizeOptions(
            phi=state["entry"].phi,
            h=quad["grid_factor"] * cube_side,
            fixed_point_tol=tol["fixed_point_tol"],
            max_iter=tol["fixed_point_max_iter"],
            quad_tol=tol["quad_tol"],
            threads=self.settings.THREADS,
        )

    def process(self, state: EntryState) -> Dict[str, Any]:
        """Main processing function for the homogenization stage."""
        try:
            cfg = state["particles"]
            f = state["force"]
            metadata = state["metadata"]
            opts = self.options(state)

            coarse = coarse_density(cfg, metadata["cube_side"])
            rho = mollify_density(coarse, metadata["mollifier_width"],
                                  self.run_config.values["quadrature"]["slab_nodes"])
            v_hat = solve_hat_v(f, rho, opts)
            u_hat = solve_hat_u(v_hat, rho, opts)
            u_bar, fixed_point = solve_bar_u(f, rho, opts, hat_v=v_hat)

            if state.get("output_dir"):
                out = Path(state["output_dir"])
                rho.to_csv(out / f"density_N{cfg.n_particles}.csv")
                write_fixed_point_trace(fixed_point, out / f"fixed_point_N{cfg.n_particles}.csv")
            return {
                "density": rho,
                "v_hat": v_hat,
                "u_hat": u_hat,
                "u_bar": u_bar,
                "fixed_point": fixed_point,
                "messages": [
                    f"Homogenization: h={opts.h:.4g} φ‖ρ‖∞={opts.phi * rho.sup_norm:.4g}",
                    f"Homogenization: ū fixed point {fixed_point.iterations} iterations"
                    f"{'' if fixed_point.converged else ' (not converged)'}",
                ],
            }

        except Exception as e:
            logger.error(f"Error in homogenization stage: {e}")
            return {"error": f"homogenization: {e}", "messages": [f"Homogenization: failed - {e}"]}
