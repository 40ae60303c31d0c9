"""
Particle models — configurations of identical spheres, assumption reports and
the boundary-layer region Ω_δ.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True, eq=False)
class ParticleConfig:
    """N sphere centres of common radius R inside the ball B_L(0).

    ``phi`` follows the rescaled convention φ = N·R³. Arrays are frozen after
    construction.
    """

    centers: np.ndarray
    radius: float
    box_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(-1, 3)
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.box_scale > 0:
            raise ValueError(f"box_scale must be positive, got {self.box_scale}")

    @property
    def n_particles(self) -> int:
        return int(self.centers.shape[0])

    @property
    def phi(self) -> float:
        return self.n_particles * self.radius ** 3

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.centers)

    @cached_property
    def d_min(self) -> float:
        """Minimal centre distance; +inf for fewer than two particles."""
        if self.n_particles < 2:
            return float("inf")
        dist, _ = self.tree.query(self.centers, k=2)
        return float(np.min(dist[:, 1]))

    def nearest_distance(self, points: np.ndarray) -> np.ndarray:
        if self.n_particles == 0:
            return np.full(np.asarray(points).shape[0], np.inf)
        dist, _ = self.tree.query(np.asarray(points, dtype=float))
        return np.asarray(dist, dtype=float)


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of validate_assumptions (containment, separation, dilution)."""

    d_min: float
    separation_constant: float
    phi_log_n: float
    passes: Dict[str, bool]
    c_sep: float
    eps_phi_log: float

    @property
    def all_passed(self) -> bool:
        return all(self.passes.values())

    def as_lines(self) -> list:
        lines = [
            f"d_min               {self.d_min:.6g}",
            f"N^-1/3 / d_min      {self.separation_constant:.6g}  (C_sep = {self.c_sep:g})",
            f"phi log N           {self.phi_log_n:.6g}  (eps = {self.eps_phi_log:g})",
        ]
        lines += [f"{name:<20}{'pass' if ok else 'FAIL'}" for name, ok in self.passes.items()]
        return lines


@dataclass(frozen=True, eq=False)
class RegionPredicate:
    """Ω_δ: points at distance ≥ max(2R, δ) from every centre."""

    config: ParticleConfig
    delta: float
    exclusion_radius: float = field(init=False)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        object.__setattr__(self, "exclusion_radius", max(2.0 * self.config.radius, self.delta))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        return self.config.nearest_distance(points) >= self.exclusion_radius

    @property
    def excluded_volume(self) -> float:
        """(4π/3)·N·r³, an upper bound ignoring overlaps of the excluded balls."""
        return 4.0 * np.pi / 3.0 * self.config.n_particles * self.exclusion_radius ** 3

    @property
    def excluded_fraction(self) -> float:
        """Excluded volume relative to the container ball B_L(0)."""
        return self.excluded_volume / (4.0 * np.pi / 3.0 * self.config.box_scale ** 3)
