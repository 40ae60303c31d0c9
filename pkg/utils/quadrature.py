"""
Quadrature — sphere, ball and interval rules used by every solver.

Sphere rules are scipy's Lebedev–Laikov rules, addressed by point count, with
weights normalised to one so a weighted sum is a surface *mean*. All tables
are built once and returned read-only.
"""

from functools import lru_cache
from typing import Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

# point count → polynomial degree integrated exactly
_LEBEDEV_DEGREES = {6: 3, 14: 5, 26: 7, 38: 9, 50: 11, 74: 13, 86: 15, 110: 17, 146: 19, 170: 21,
                    194: 23, 230: 25, 266: 27, 302: 29, 350: 31}

SUPPORTED_ANGULAR_ORDERS = tuple(sorted(_LEBEDEV_DEGREES))


def lebedev_degree(order: int) -> int:
    if order not in _LEBEDEV_DEGREES:
        raise ValueError(f"Angular order {order} not available; choose one of {SUPPORTED_ANGULAR_ORDERS}")
    return _LEBEDEV_DEGREES[order]


@lru_cache(maxsize=None)
def lebedev_rule(order: int = 26) -> Tuple[np.ndarray, np.ndarray]:
    """Unit directions and weights (summing to 1) of the ``order``-point rule."""
    points, weights = integrate.lebedev_rule(lebedev_degree(order))
    directions = np.ascontiguousarray(points.T)
    weights = weights / weights.sum()
    directions.setflags(write=False)
    weights.setflags(write=False)
    return directions, weights


@lru_cache(maxsize=None)
def _unit_gauss(n: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss–Legendre nodes and weights on [a, b]."""
    x, w = _unit_gauss(int(n))
    return a + (b - a) * x, (b - a) * w


@lru_cache(maxsize=None)
def _unit_ball_rule(radial_order: int, angular_order: int) -> Tuple[np.ndarray, np.ndarray]:
    r, wr = gauss_legendre(radial_order, 0.0, 1.0)
    dirs, wa = lebedev_rule(angular_order)
    offsets = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    weights = (4.0 * np.pi * wr[:, None] * r[:, None] ** 2 * wa[None, :]).reshape(-1)
    offsets.setflags(write=False)
    weights.setflags(write=False)
    return offsets, weights


def ball_rule(radius: float, radial_order: int = 8, angular_order: int = 26) -> Tuple[np.ndarray, np.ndarray]:
    """Product rule on B_radius(0): offsets (m, 3) and weights summing to the ball volume."""
    offsets, weights = _unit_ball_rule(int(radial_order), int(angular_order))
    return radius * offsets, radius ** 3 * weights


@lru_cache(maxsize=None)
def _unit_cube_inverse_distance(order: int = 32) -> float:
    # Split the centred unit cube into six pyramids over its faces; the radial
    # integral of r⁻¹·r² is done in closed form, leaving a smooth face integral.
    x, w = gauss_legendre(order, -0.5, 0.5)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    face = np.sum(np.outer(w, w) / np.sqrt(xx ** 2 + yy ** 2 + 0.25))
    return 1.5 * face


def cube_inverse_distance_integral(side: float) -> float:
    """∫ over the centred cube of edge ``side`` of 1/|x| dx (≈ 2.38·side²)."""
    return _unit_cube_inverse_distance() * side ** 2
