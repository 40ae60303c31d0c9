"""
Motion models — rigid body motions and iteration traces.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np


@dataclass(frozen=True, eq=False)
class RigidMotion:
    """V + ω∧(x − center)."""

    velocity: np.ndarray
    omega: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        for name in ("velocity", "omega", "center"):
            arr = np.array(getattr(self, name), dtype=float).reshape(3)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def evaluate(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.velocity + np.cross(self.omega, pts - self.center)


def _ratios(values: List[float]) -> List[float]:
    return [values[k + 1] / values[k] if values[k] > 0 else 0.0 for k in range(len(values) - 1)]


@dataclass
class ResidualTrace:
    """Per-iteration reflection residuals.

    ``residuals[k]`` is max_i |surface mean of e v_k on ∂B_i|;
    ``surface_residuals[k]`` the pointwise max of |e v_k| over the surface nodes.
    """

    residuals: List[float] = field(default_factory=list)
    surface_residuals: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def ratios(self) -> List[float]:
        return _ratios(self.residuals)

    @property
    def iterations(self) -> int:
        return max(len(self.residuals) - 1, 0)

    def rows(self):
        ratios = [float("nan")] + self.ratios
        return [(k, r, q) for k, (r, q) in enumerate(zip(self.residuals, ratios))]


@dataclass
class FixedPointTrace:
    """Successive sup-differences of eū^m for the homogenized fixed point."""

    residuals: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def ratios(self) -> List[float]:
        return _ratios(self.residuals)

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def rows(self):
        ratios = [float("nan")] + self.ratios
        return [(m + 1, r, q) for m, (r, q) in enumerate(zip(self.residuals, ratios))]
