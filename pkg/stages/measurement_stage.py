"""
Measurement Stage — Norms of the differences between the microscopic and the
homogenized fields, assembled into one report row.
"""

import logging
from typing import Any, Dict

from config.run_config import RunConfig
from models.particles import RegionPredicate
from models.study import EntryState
from services.metrics import einstein_coefficient_sweep, lp_norm_diff, region_samples, sup_norm_diff
from stages.homogenization_stage import HomogenizationStage
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)


class MeasurementStage:
    """Computes every ratio column of the convergence report for one entry."""

    def __init__(self, run_config: RunConfig, homogenization: HomogenizationStage):
        self.run_config = run_config
        self.homogenization = homogenization

    def process(self, state: EntryState) -> Dict[str, Any]:
        """Main processing function for the measurement stage."""
        try:
            cfg = state["particles"]
            phi = state["entry"].phi
            metadata = state["metadata"]
            quad = self.run_config.values["quadrature"]
            region = RegionPredicate(cfg, metadata["delta"])
            sample_seed = derive_seed(state["seed"], "samples")
            pts = region_samples(region, quad["sample_spacing"], quad_order=quad["angular_order"],
                                 seed=sample_seed)

            u_approx, u_bar = state["u_approx"], state["u_bar"]
            half = quad["lp_radius_factor"] * cfg.box_scale
            box = ([-half] * 3, [half] * 3)
            row = {
                "N": cfg.n_particles,
                "phi": phi,
                "R": cfg.radius,
                "d_min": cfg.d_min,
                "delta": metadata["delta"],
                "s": metadata["cube_side"],
                "err_sup_over_phi": sup_norm_diff(u_approx, u_bar, region, points=pts) / phi,
                "err_l1_over_phi": lp_norm_diff(u_approx, u_bar, box, 1.0, quad["lp_spacing"], cfg) / phi,
                "err_l32_over_phi": lp_norm_diff(u_approx, u_bar, box, 1.5, quad["lp_spacing"], cfg) / phi,
                "v_vhat_over_phi": sup_norm_diff(state["v_punctured"], state["v_hat"], region, points=pts) / phi,
                "ut_uhat_over_phi": sup_norm_diff(state["u_tilde"], state["u_hat"], region, points=pts) / phi,
                "uhat_ubar_over_phi2": sup_norm_diff(state["u_hat"], u_bar, region, points=pts) / phi ** 2,
                "reflect_iters": state["reflection"].iterations,
            }
            update: Dict[str, Any] = {
                "row": row,
                "messages": [f"Measurement: ‖u−ū‖∞/φ = {row['err_sup_over_phi']:.4g} "
                             f"on {pts.shape[0]} samples"],
            }

            if metadata.get("beta_sweep"):
                sweep = einstein_coefficient_sweep(
                    u_approx, state["force"], state["density"], self.homogenization.options(state), region,
                    self.run_config.beta_values(), quad["sample_spacing"], seed=sample_seed,
                    hat_v=state["v_hat"],
                )
                update["sweep"] = sweep
                update["messages"].append(f"Measurement: best β = {sweep.best_beta:.3f}")
            return update

        except Exception as e:
            logger.error(f"Error in measurement stage: {e}")
            return {"error": f"measurement: {e}", "messages": [f"Measurement: failed - {e}"]}
