"""
Study Orchestrator — Drives the convergence study over a schedule.

Compiles the per-entry study graph once, invokes it for every schedule entry
in order and assembles the report, the plots and the run manifest.
"""

import json
import logging
import platform
import time
from datetime import datetime
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from config.run_config import RunConfig, parse_floats
from config.settings import Settings
from graph.study_graph import build_study_graph
from models.study import EntryState, ExperimentReport, Schedule, ScheduleEntry
from services.fields import ForceField, manufactured_force
from services.metrics import RATIO_COLUMNS, summarize_scaling
from utils.exceptions import ConfigError
from utils.seeding import derive_seed

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ("numpy", "scipy", "matplotlib", "langgraph", "python-dotenv")


def force_from_config(run_config: RunConfig) -> ForceField:
    """Manufactured force described by the ``[force]`` section."""
    section = run_config.values["force"]
    try:
        amplitude = parse_floats(section["amplitude"])
        center = parse_floats(section["center"])
        return manufactured_force(amplitude, section["support_radius"], center)
    except ValueError as e:
        raise ConfigError(f"[force]: {e}") from e


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = importlib_metadata.version(name)
        except importlib_metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def write_plots(report: ExperimentReport, output_dir: Union[str, Path]) -> List[Path]:
    """One SVG per ratio column: log-x in N, linear y."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ns = np.asarray(report.column("N"), dtype=float)
    written = []
    for column in RATIO_COLUMNS:
        values = np.asarray(report.column(column), dtype=float)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(ns, values, marker="o")
        ax.set_xscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel(column)
        ax.grid(True, which="both", alpha=0.3)
        fig.tight_layout()
        path = output_dir / f"{column}.svg"
        # no timestamp in the SVG
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


class StudyOrchestrator:
    """
    High-level orchestrator that wraps the per-entry LangGraph pipeline.

    Usage:
        orchestrator = StudyOrchestrator(run_config, settings)
        report = orchestrator.run(output_dir="runs/study")
    """

    def __init__(self, run_config: RunConfig, settings: Settings):
        self.run_config = run_config
        self.settings = settings
        self.graph = None
        self.entry_seeds: Dict[int, int] = {}
        self.sweeps: Dict[int, Any] = {}
        self._initialized = False

    def initialize(self) -> None:
        """Compile the study graph."""
        if self._initialized:
            return
        self.graph = build_study_graph(self.run_config, self.settings)
        self._initialized = True
        logger.info("Study orchestrator initialized")

    @property
    def root_seed(self) -> int:
        return int(self.run_config.values["schedule"]["seed"])

    def run_entry(self, entry: ScheduleEntry, f: ForceField, output_dir: Optional[str] = None,
                  beta_sweep: bool = False) -> EntryState:
        """Run the graph for one schedule entry; never raises."""
        if not self._initialized:
            self.initialize()

        seed = derive_seed(self.root_seed, "entry", entry.n_particles)
        self.entry_seeds[entry.n_particles] = seed
        initial_state: EntryState = {
            "entry": entry,
            "seed": seed,
            "force": f,
            "messages": [],
            "error": None,
            "metadata": {"beta_sweep": beta_sweep},
        }
        if output_dir:
            initial_state["output_dir"] = str(output_dir)

        logger.info("=" * 60)
        logger.info(f"ENTRY N={entry.n_particles} φ={entry.phi:.4g} (φ log N = {entry.phi_log_n:.4g})")
        try:
            final_state = self.graph.invoke(initial_state)
        except Exception as e:
            logger.error(f"Entry N={entry.n_particles} failed: {e}")
            return {**initial_state, "error": str(e),
                    "messages": initial_state["messages"] + [f"SYSTEM ERROR: {e}"]}
        for message in final_state.get("messages", []):
            logger.info(message)
        return final_state

    def convergence_study(self, schedule: Schedule, f: ForceField,
                          output_dir: Optional[Union[str, Path]] = None) -> ExperimentReport:
        """Run every entry in schedule order; failed entries become NaN rows."""
        record_timing = self.run_config.values["output"]["record_timing"]
        beta_sweep = self.run_config.values["output"]["beta_sweep"]
        report = ExperimentReport()
        last = len(schedule) - 1
        for index, entry in enumerate(schedule):
            started = time.perf_counter()
            state = self.run_entry(entry, f, str(output_dir) if output_dir else None,
                                   beta_sweep=beta_sweep and index == last)
            wall_ms = (time.perf_counter() - started) * 1e3 if record_timing else 0.0
            if state.get("error") or not state.get("row"):
                error = state.get("error") or "no report row produced"
                logger.warning(f"Entry N={entry.n_particles} marked failed: {error}")
                report.add_failure(entry.n_particles, entry.phi, error)
                continue
            report.add_row({**state["row"], "wall_ms": wall_ms})
            if state.get("sweep") is not None:
                self.sweeps[entry.n_particles] = state["sweep"]
        return report

    def run(self, output_dir: Union[str, Path]) -> ExperimentReport:
        """Full study: echoed config, report CSV, plots and manifest in ``output_dir``."""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()

        schedule = self.run_config.schedule()
        f = force_from_config(self.run_config)
        self.run_config.echo(output_dir / "run_config.ini")
        report = self.convergence_study(schedule, f, output_dir)
        report.to_csv(output_dir / "report.csv")
        if self.run_config.values["output"]["plots"] and report.rows:
            write_plots(report, output_dir / "plots")

        scaling = summarize_scaling(report)
        wall_s = time.perf_counter() - started
        self.write_manifest(output_dir / "manifest.json", report, scaling, wall_s)
        self._log_summary(report, scaling, wall_s)
        return report

    def write_manifest(self, path: Path, report: ExperimentReport,
                       scaling: Dict[str, Any], wall_s: float) -> Path:
        manifest = {
            "created": datetime.now().isoformat(timespec="seconds"),
            "config_source": self.run_config.source,
            "versions": package_versions(),
            "root_seed": self.root_seed,
            "entry_seeds": {str(n): seed for n, seed in self.entry_seeds.items()},
            "threads": self.settings.THREADS,
            "chunk_size": self.settings.CHUNK_SIZE,
            "wall_time_s": wall_s if self.run_config.values["output"]["record_timing"] else 0.0,
            "failures": report.failures,
            "scaling": {column: {"exponent": exponent, "r2": None if np.isnan(r2) else r2}
                        for column, (exponent, r2) in scaling.items()},
            "beta_sweep": {str(n): {"betas": s.betas, "errors": s.errors, "best_beta": s.best_beta}
                           for n, s in self.sweeps.items()},
        }
        path.write_text(json.dumps(manifest, indent=2))
        return path

    def _log_summary(self, report: ExperimentReport, scaling: Dict[str, Any], wall_s: float) -> None:
        """Log a brief summary of the study outcome."""
        logger.info("=" * 60)
        logger.info("CONVERGENCE STUDY SUMMARY")
        logger.info("-" * 60)
        for row in report.rows:
            logger.info(f"N={int(row['N']):>6}  ‖u−ū‖∞/φ={row['err_sup_over_phi']:.4g}  "
                        f"‖û−ū‖∞/φ²={row['uhat_ubar_over_phi2']:.4g}  reflections={row['reflect_iters']}")
        for column, (exponent, r2) in scaling.items():
            logger.info(f"{column}: exponent {exponent:+.3f} (r² {r2:.3f})")
        for n, sweep in self.sweeps.items():
            logger.info(f"Best β at N={n}: {sweep.best_beta:.3f}")
        logger.info(f"Failed entries: {len(report.failures)}")
        logger.info(f"Wall time: {wall_s:.1f} s")
        logger.info("=" * 60)
