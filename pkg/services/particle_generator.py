"""
Particle Generator — Builds sphere configurations for the dilute regime.

Two generators are provided: a jittered cubic lattice and random sequential
adsorption (RSA) with a minimum gap. Both are deterministic for a fixed seed.
The module also validates configurations against the containment, separation
and dilution assumptions and defines the boundary-layer region Ω_δ.
"""

import logging
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from models.particles import AssumptionReport, ParticleConfig, RegionPredicate
from utils.exceptions import DomainError, OverlapError, SaturationError

logger = logging.getLogger(__name__)

# Jamming coverage of random sequential adsorption of spheres.
RSA_JAMMING_FRACTION = 0.3841
RSA_BATCH = 4096


def radius_for(n_particles: int, phi: float) -> float:
    """R = (φ/N)^{1/3} under the convention φ = N·R³."""
    if n_particles < 1:
        raise ValueError(f"Need at least one particle, got {n_particles}")
    if not phi > 0:
        raise ValueError(f"phi must be positive, got {phi}")
    return (phi / n_particles) ** (1.0 / 3.0)


def default_delta(n_particles: int) -> float:
    """δ = N^{-5/12}: between N^{-1/2} and the particle distance N^{-1/3}."""
    return float(n_particles) ** (-5.0 / 12.0)


def default_cube_side(n_particles: int) -> float:
    """s = N^{-1/6}: about √N particles per coarse cube."""
    return float(n_particles) ** (-1.0 / 6.0)


def _uniform_in_ball(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    """``count`` points uniform in B_radius(0) (direction × r^{1/3} sampling)."""
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    radii = radius * rng.random(count) ** (1.0 / 3.0)
    return directions * radii[:, None]


def generate_lattice(n_per_axis: int, phi: float, L: float = 1.0, jitter: float = 0.0,
                     seed: int = 0, spacing: Optional[float] = None) -> ParticleConfig:
    """n³ centres on a cubic lattice in B_{L−R}(0), each displaced by at most jitter·spacing."""
    if n_per_axis < 1:
        raise ValueError(f"n_per_axis must be ≥ 1, got {n_per_axis}")
    if not 0.0 <= jitter <= 0.3:
        raise ValueError(f"jitter must lie in [0, 0.3], got {jitter}")
    n_total = n_per_axis ** 3
    radius = radius_for(n_total, phi)
    if radius >= L:
        raise DomainError(f"Radius {radius:.4g} does not fit in box scale {L}")
    if spacing is None:
        spacing = 2.0 * (L - radius) / (np.sqrt(3.0) * (n_per_axis + 2.0 * jitter))

    if 2.0 * radius >= spacing * (1.0 - 2.0 * jitter):
        raise OverlapError(
            f"Spacing {spacing:.4g} with jitter {jitter} leaves no room for spheres of radius {radius:.4g}"
        )
    reach = np.sqrt(3.0) * 0.5 * (n_per_axis - 1) * spacing + jitter * spacing
    if reach + radius >= L:
        raise DomainError(f"Lattice reach {reach:.4g} + R exceeds box scale {L}")

    offsets = (np.arange(n_per_axis) - 0.5 * (n_per_axis - 1)) * spacing
    centers = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"), axis=-1).reshape(-1, 3)
    if jitter > 0:
        rng = np.random.default_rng(seed)
        centers = centers + _uniform_in_ball(rng, n_total, jitter * spacing)

    cfg = ParticleConfig(centers, radius, L, seed)
    if cfg.d_min <= 2.0 * radius:
        raise OverlapError(f"Jittered lattice has d_min {cfg.d_min:.4g} ≤ 2R = {2 * radius:.4g}")
    logger.debug(f"Lattice n={n_per_axis} spacing={spacing:.4g} R={radius:.4g} d_min={cfg.d_min:.4g}")
    return cfg


def generate_rsa(N: int, phi: float, L: float = 1.0, gap_factor: float = 2.0, seed: int = 0,
                 max_attempts: Optional[int] = None) -> ParticleConfig:
    """Random sequential adsorption in B_{L−R}(0) with pairwise distance ≥ gap_factor·2R."""
    if gap_factor < 1.0:
        raise ValueError(f"gap_factor must be ≥ 1, got {gap_factor}")
    radius = radius_for(N, phi)
    if radius >= L:
        raise DomainError(f"Radius {radius:.4g} does not fit in box scale {L}")
    inner = L - radius
    min_dist = 2.0 * gap_factor * radius

    # Exclusion spheres of radius gap·R must fit under the RSA jamming coverage.
    coverage = N * (gap_factor * radius) ** 3 / inner ** 3
    if coverage > RSA_JAMMING_FRACTION:
        raise SaturationError(
            f"Requested coverage {coverage:.3f} exceeds the RSA jamming fraction {RSA_JAMMING_FRACTION}"
        )

    cap = int(max_attempts) if max_attempts is not None else 10 ** 6 * N
    rng = np.random.default_rng(seed)
    placed = np.zeros((0, 3))
    attempts = 0
    while placed.shape[0] < N:
        if attempts >= cap:
            raise SaturationError(f"Placed {placed.shape[0]} of {N} spheres after {attempts} attempts")
        batch = min(RSA_BATCH, cap - attempts)
        candidates = _uniform_in_ball(rng, batch, inner)
        attempts += batch
        if placed.shape[0]:
            d2 = np.min(((candidates[:, None, :] - placed[None, :, :]) ** 2).sum(-1), axis=1)
            candidates = candidates[d2 >= min_dist ** 2]
        accepted: List[np.ndarray] = []
        for cand in candidates:
            if accepted and np.min(((np.array(accepted) - cand) ** 2).sum(-1)) < min_dist ** 2:
                continue
            accepted.append(cand)
            if placed.shape[0] + len(accepted) == N:
                break
        if accepted:
            placed = np.vstack([placed, np.array(accepted)])

    logger.debug(f"RSA placed N={N} R={radius:.4g} after {attempts} attempts")
    return ParticleConfig(placed, radius, L, seed)


def validate_assumptions(cfg: ParticleConfig, c_sep: float = 4.0,
                         eps_phi_log: float = 0.5) -> AssumptionReport:
    """Check containment, separation (N^{-1/3} ≤ C·d, d > 2R) and dilution (φ log N ≤ ε)."""
    n = cfg.n_particles
    d_min = cfg.d_min
    if n < 2:
        separation_constant = 0.0
    elif d_min <= 0.0:
        separation_constant = float("inf")
    else:
        separation_constant = n ** (-1.0 / 3.0) / d_min
    phi_log_n = cfg.phi * np.log(n) if n > 0 else 0.0

    reach = np.linalg.norm(cfg.centers, axis=1) + cfg.radius if n else np.zeros(0)
    passes = {
        "containment": bool(np.all(reach < cfg.box_scale)),
        "separation": bool(d_min > 2.0 * cfg.radius and separation_constant <= c_sep),
        "dilution": bool(phi_log_n <= eps_phi_log),
    }
    return AssumptionReport(d_min, separation_constant, float(phi_log_n), passes, c_sep, eps_phi_log)


def omega_delta_mask(cfg: ParticleConfig, delta: Optional[float] = None) -> RegionPredicate:
    """Region Ω_δ with exclusion radius max(2R, δ); δ defaults to N^{-5/12}."""
    if delta is None:
        delta = default_delta(max(cfg.n_particles, 1))
    return RegionPredicate(cfg, float(delta))


def lattice_inverse_power_sums(ns: Iterable[int] = (4, 6, 8, 10, 12),
                               ks: Iterable[int] = (1, 2, 3, 4)) -> Dict[int, List[Tuple[int, float]]]:
    """Normalised sums d^k·Σ_j |x − X_j|^{-k} at the centre of an n³ lattice in the unit box.

    Even n only, so the centre is not itself a lattice point.
    """
    ks = tuple(ks)
    sums: Dict[int, List[Tuple[int, float]]] = {k: [] for k in ks}
    for n in ns:
        if n % 2:
            raise ValueError(f"Lattice sums need an even n, got {n}")
        offsets = (np.arange(n) + 0.5) / n - 0.5
        pts = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"), axis=-1).reshape(-1, 3)
        dist = np.linalg.norm(pts, axis=1)
        d = 1.0 / n
        for k in ks:
            sums[k].append((n ** 3, float(d ** k * np.sum(dist ** (-float(k))))))
    return sums
