"""
Strain models — symmetric trace-free strains, dipole specifications and
summation plans.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from utils.stokes_kernels import STRAIN_TOLERANCE, check_strain

logger = logging.getLogger(__name__)


def project_strain(matrix) -> np.ndarray:
    """Symmetric, trace-free part of a (batch of) 3×3 matrices."""
    m = np.asarray(matrix, dtype=float)
    sym = 0.5 * (m + np.swapaxes(m, -1, -2))
    trace = np.trace(sym, axis1=-2, axis2=-1)
    return sym - (trace / 3.0)[..., None, None] * np.eye(3)


@dataclass(frozen=True, eq=False)
class SymStrain:
    """Symmetric trace-free 3×3 strain."""

    matrix: np.ndarray

    def __post_init__(self):
        m = check_strain(np.array(self.matrix, dtype=float).reshape(3, 3))
        m = np.array(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_matrix(cls, matrix, project: bool = True) -> "SymStrain":
        """Build from an arbitrary matrix, projecting with a warning when needed."""
        m = np.asarray(matrix, dtype=float).reshape(3, 3)
        projected = project_strain(m)
        deviation = float(np.max(np.abs(projected - m)))
        if deviation > STRAIN_TOLERANCE * max(1.0, float(np.max(np.abs(m)))):
            if not project:
                check_strain(m)
            logger.warning(f"Strain projected to symmetric trace-free part (deviation {deviation:.3e})")
        return cls(projected)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))


@dataclass(frozen=True, eq=False)
class DipoleSpec:
    """Parameters (X_i, R, ε_i) of one straining dipole."""

    center: np.ndarray
    radius: float
    strain: SymStrain

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        c = np.array(self.center, dtype=float).reshape(3)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not isinstance(self.strain, SymStrain):
            object.__setattr__(self, "strain", SymStrain(self.strain))


@dataclass(frozen=True, eq=False)
class DipoleSet:
    """Array form of many dipoles sharing one radius (particle order preserved)."""

    centers: np.ndarray
    radius: float
    strains: np.ndarray

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).reshape(-1, 3)
        strains = np.array(self.strains, dtype=float).reshape(-1, 3, 3)
        if centers.shape[0] != strains.shape[0]:
            raise ValueError(f"{centers.shape[0]} centres but {strains.shape[0]} strains")
        centers.setflags(write=False)
        strains.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "strains", strains)

    @classmethod
    def from_specs(cls, specs: Sequence[DipoleSpec]) -> "DipoleSet":
        if not specs:
            return cls(np.zeros((0, 3)), 1.0, np.zeros((0, 3, 3)))
        radii = {float(s.radius) for s in specs}
        if len(radii) != 1:
            raise ValueError("DipoleSet requires a common radius")
        return cls(np.array([s.center for s in specs]), radii.pop(),
                   np.array([s.strain.matrix for s in specs]))

    def __len__(self) -> int:
        return int(self.centers.shape[0])

    def active(self, threshold: float = 1e-14) -> "DipoleSet":
        """Drop dipoles whose strain norm is below ``threshold``."""
        keep = np.linalg.norm(self.strains, axis=(1, 2)) >= threshold
        if np.all(keep):
            return self
        return DipoleSet(self.centers[keep], self.radius, self.strains[keep])


# (tolerance floor, opening angle) for order-2 trees
OPENING_ANGLES = ((1e-3, 0.3), (1e-4, 0.2), (1e-6, 0.1))
FINEST_OPENING_ANGLE = 0.05


@dataclass(frozen=True)
class SumPlan:
    """How dipole sums are evaluated.

    ``theta=None`` picks the opening angle from ``tolerance``.
    """

    method: str = "direct"
    theta: Optional[float] = None
    expansion_order: int = 2
    tolerance: float = 1e-6
    leaf_size: int = 16
    self_check_fraction: float = 0.01
    threads: int = 1
    chunk_size: int = 512
    compensated: bool = False

    def __post_init__(self):
        if self.method not in ("direct", "tree"):
            raise ValueError(f"Unknown summation method '{self.method}'")
        if self.theta is not None and not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.expansion_order not in (0, 1, 2):
            raise ValueError(f"expansion_order must be 0, 1 or 2, got {self.expansion_order}")
        if self.threads < 1 or self.chunk_size < 1 or self.leaf_size < 1:
            raise ValueError("threads, chunk_size and leaf_size must be positive")

    @property
    def opening_angle(self) -> float:
        if self.theta is not None:
            return self.theta
        for bound, angle in OPENING_ANGLES:
            if self.tolerance >= bound:
                return angle
        return FINEST_OPENING_ANGLE
