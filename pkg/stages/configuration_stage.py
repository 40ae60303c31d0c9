"""
Configuration Stage — Builds the particle configuration of one schedule entry
and checks it against the dilute-regime assumptions.
"""

import logging
from pathlib import Path
from typing import Any, Dict

from config.run_config import RunConfig, optional_float
from models.study import EntryState
from services.particle_generator import (
    default_cube_side, default_delta, generate_lattice, generate_rsa, validate_assumptions,
)
from services.particle_io import write_config

logger = logging.getLogger(__name__)


class ConfigurationStage:
    """Generates particles (lattice or RSA) and validates them."""

    def __init__(self, run_config: RunConfig):
        self.run_config = run_config

    def build_particles(self, state: EntryState):
        sched = self.run_config.values["schedule"]
        entry = state["entry"]
        if sched["generator"] == "lattice":
            return generate_lattice(entry.n_per_axis, entry.phi, sched["box_scale"], sched["jitter"],
                                    seed=state["seed"])
        return generate_rsa(entry.n_particles, entry.phi, sched["box_scale"], sched["gap_factor"],
                            seed=state["seed"])

    def process(self, state: EntryState) -> Dict[str, Any]:
        """Main processing function for the configuration stage."""
        try:
            entry = state["entry"]
            tolerances = self.run_config.values["tolerances"]
            sched = self.run_config.values["schedule"]
            cfg = self.build_particles(state)
            report = validate_assumptions(cfg, tolerances["c_sep"], tolerances["eps_phi_log"])
            for line in report.as_lines():
                logger.debug(line)
            if not report.all_passed:
                failed = [name for name, ok in report.passes.items() if not ok]
                raise ValueError(f"Assumptions failed for N={entry.n_particles}: {', '.join(failed)}")

            delta = optional_float(sched["delta"]) or default_delta(cfg.n_particles)
            cube_side = optional_float(sched["cube_side"]) or default_cube_side(cfg.n_particles)
            width = optional_float(sched["mollifier_width"]) or cube_side
            if state.get("output_dir"):
                write_config(cfg, Path(state["output_dir"]) / f"particles_N{cfg.n_particles}.ssl")

            metadata = dict(state.get("metadata") or {})
            metadata.update({"delta": delta, "cube_side": cube_side, "mollifier_width": width})
            return {
                "particles": cfg,
                "assumptions": report,
                "metadata": metadata,
                "messages": [
                    f"Configuration: N={cfg.n_particles} R={cfg.radius:.4g} d_min={cfg.d_min:.4g}",
                    f"Configuration: φ log N = {report.phi_log_n:.4g}",
                ],
            }

        except Exception as e:
            logger.error(f"Error in configuration stage: {e}")
            return {"error": f"configuration: {e}", "messages": [f"Configuration: failed - {e}"]}
