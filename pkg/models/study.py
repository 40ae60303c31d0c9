"""
Study State — Schedules, solver options, the convergence report and the
shared state that flows through the study pipeline.

EntryState is the LangGraph state of one schedule entry: every stage node
reads what earlier stages produced and writes its own outputs back.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TypedDict, Union

from typing_extensions import Annotated

REPORT_COLUMNS = (
    "N", "phi", "R", "d_min", "delta", "s",
    "err_sup_over_phi", "err_l1_over_phi", "err_l32_over_phi",
    "v_vhat_over_phi", "ut_uhat_over_phi", "uhat_ubar_over_phi2",
    "reflect_iters", "wall_ms",
)


def _merge_messages(left: List[str], right: List[str]) -> List[str]:
    """Reducer that appends new log lines to the existing list."""
    return left + right


@dataclass(frozen=True)
class ScheduleEntry:
    n_particles: int
    phi: float
    n_per_axis: Optional[int] = None  # lattice entries only

    @property
    def phi_log_n(self) -> float:
        return self.phi * math.log(self.n_particles)


@dataclass(frozen=True)
class Schedule:
    """Increasing N with strictly decreasing φ·log N."""

    entries: Sequence[ScheduleEntry]

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("Schedule must contain at least one entry")
        for prev, nxt in zip(entries, entries[1:]):
            if nxt.n_particles <= prev.n_particles:
                raise ValueError(f"N must increase along the schedule ({prev.n_particles} → {nxt.n_particles})")
            if nxt.phi_log_n >= prev.phi_log_n:
                raise ValueError(
                    f"φ·log N must decrease along the schedule ({prev.phi_log_n:.4g} → {nxt.phi_log_n:.4g})"
                )
        object.__setattr__(self, "entries", entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class HomogenizeOptions:
    """Discretisation and iteration controls for the homogenized solves."""

    phi: float
    h: float
    fixed_point_tol: float = 1e-10
    max_iter: int = 50
    beta: float = 5.0
    threads: int = 1
    quad_tol: float = 0.25

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"Grid spacing must be positive, got {self.h}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be ≥ 1, got {self.max_iter}")
        if self.phi < 0:
            raise ValueError(f"phi must be non-negative, got {self.phi}")
        if not self.quad_tol > 0:
            raise ValueError(f"quad_tol must be positive, got {self.quad_tol}")


@dataclass
class ExperimentReport:
    """Rows of the convergence table plus the entries that failed."""

    rows: List[Dict[str, float]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)

    def add_row(self, values: Dict[str, float]):
        self.rows.append({col: values.get(col, float("nan")) for col in REPORT_COLUMNS})

    def add_failure(self, n_particles: int, phi: float, error: str):
        self.failures.append({"N": n_particles, "phi": phi, "error": error})
        self.add_row({"N": n_particles, "phi": phi})

    def column(self, name: str) -> List[float]:
        return [row[name] for row in self.rows]

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for row in self.rows:
                writer.writerow([_format_cell(col, row[col]) for col in REPORT_COLUMNS])
        return path


def _format_cell(column: str, value) -> str:
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    if column in ("N", "reflect_iters"):
        return str(int(value))
    return f"{float(value):.10g}"


class EntryState(TypedDict, total=False):
    """
    State of one schedule entry as it moves through the study graph.

    Groups:
    - Identification: entry, seed, output directory
    - Microscopic: particles, assumption report, background fields, dipole approximation
    - Homogenized: density, v̂, û, ū and their traces
    - Measurement: report row
    - Meta: messages log, error, metadata
    """

    # ── Identification ──────────────────────────────────────────────
    entry: ScheduleEntry
    seed: int
    output_dir: str

    # ── Microscopic ─────────────────────────────────────────────────
    particles: Any
    assumptions: Any
    force: Any
    v: Any
    v_punctured: Any
    reflection: Any
    u_approx: Any
    u_tilde: Any

    # ── Homogenized ─────────────────────────────────────────────────
    density: Any
    v_hat: Any
    u_hat: Any
    u_bar: Any
    fixed_point: Any

    # ── Measurement ─────────────────────────────────────────────────
    row: Optional[Dict[str, float]]
    sweep: Any

    # ── Meta ────────────────────────────────────────────────────────
    messages: Annotated[List[str], _merge_messages]
    error: Optional[str]
    metadata: Optional[Dict[str, Any]]
