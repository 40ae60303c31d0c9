"""
Stokes kernels — Oseen tensor, its derivatives, pressure kernel, stresslet,
the single-sphere straining dipole and the rotlet.

Every function accepts either one point ``(3,)`` or a batch ``(M, 3)`` and
returns arrays with the batch axis first (squeezed again for a single point).
Index conventions: ``oseen_grad(x)[..., i, j, k] = ∂_k Φ_ij`` and gradients of
vector fields are ``G[..., j, k] = ∂_k v_j``.
"""

import logging
from typing import Tuple

import numpy as np

from utils.exceptions import SingularPointError, StrainError

logger = logging.getLogger(__name__)

EIGHT_PI = 8.0 * np.pi
SINGULAR_RADIUS = 1e-14
STRAIN_TOLERANCE = 1e-12
# Points within this relative distance of a sphere use the interior branch.
SURFACE_SLACK = 1e-12

_EYE = np.eye(3)


def _as_points(x) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    return (arr[None, :] if single else arr), single


def _norms(x: np.ndarray) -> np.ndarray:
    rho = np.linalg.norm(x, axis=-1)
    if np.any(rho < SINGULAR_RADIUS):
        raise SingularPointError(f"Kernel evaluated within {SINGULAR_RADIUS:g} of its singularity")
    return rho


def _squeeze(out: np.ndarray, single: bool) -> np.ndarray:
    return out[0] if single else out


def cross_matrix(omega) -> np.ndarray:
    """Matrix W with W @ r = omega ∧ r (batched over leading axes)."""
    w = np.asarray(omega, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def check_strain(eps, tolerance: float = STRAIN_TOLERANCE) -> np.ndarray:
    """Raise StrainError unless ``eps`` is symmetric and trace-free within tolerance."""
    e = np.asarray(eps, dtype=float)
    scale = max(1.0, float(np.max(np.abs(e))) if e.size else 1.0)
    asym = float(np.max(np.abs(e - np.swapaxes(e, -1, -2)))) if e.size else 0.0
    trace = float(np.max(np.abs(np.trace(e, axis1=-2, axis2=-1)))) if e.size else 0.0
    if asym > tolerance * scale or trace > tolerance * scale:
        raise StrainError(f"Strain not symmetric trace-free: asymmetry {asym:.3e}, trace {trace:.3e}")
    return e


def oseen(x) -> np.ndarray:
    """Φ(x) = (1/8π)(I/|x| + x⊗x/|x|³)."""
    pts, single = _as_points(x)
    rho = _norms(pts)
    out = (_EYE[None] / rho[:, None, None]
           + np.einsum("mi,mj->mij", pts, pts) / rho[:, None, None] ** 3) / EIGHT_PI
    return _squeeze(out, single)


def oseen_grad(x) -> np.ndarray:
    """∂_k Φ_ij as an array indexed [i, j, k]."""
    pts, single = _as_points(x)
    rho = _norms(pts)
    inv3 = 1.0 / rho ** 3
    d = _EYE
    out = (-np.einsum("ij,mk->mijk", d, pts)
           + np.einsum("ik,mj->mijk", d, pts)
           + np.einsum("jk,mi->mijk", d, pts)) * inv3[:, None, None, None]
    out -= 3.0 * np.einsum("mi,mj,mk->mijk", pts, pts, pts) * (inv3 / rho ** 2)[:, None, None, None]
    return _squeeze(out / EIGHT_PI, single)


def oseen_hessian(x) -> np.ndarray:
    """∂_m ∂_k Φ_ij as an array indexed [i, j, k, m]."""
    pts, single = _as_points(x)
    rho = _norms(pts)
    r3 = (1.0 / rho ** 3)[:, None, None, None, None]
    r5 = (1.0 / rho ** 5)[:, None, None, None, None]
    r7 = (1.0 / rho ** 7)[:, None, None, None, None]
    d = _EYE
    x_ = pts
    out = -np.einsum("ij,km->ijkm", d, d)[None] * r3
    out = out + 3.0 * np.einsum("ij,pk,pm->pijkm", d, x_, x_) * r5
    out = out + (np.einsum("ik,jm->ijkm", d, d) + np.einsum("jk,im->ijkm", d, d))[None] * r3
    out = out - 3.0 * (np.einsum("ik,pj,pm->pijkm", d, x_, x_)
                       + np.einsum("jk,pi,pm->pijkm", d, x_, x_)) * r5
    out = out - 3.0 * (np.einsum("im,pj,pk->pijkm", d, x_, x_)
                       + np.einsum("jm,pi,pk->pijkm", d, x_, x_)
                       + np.einsum("km,pi,pj->pijkm", d, x_, x_)) * r5
    out = out + 15.0 * np.einsum("pi,pj,pk,pm->pijkm", x_, x_, x_, x_) * r7
    return _squeeze(out / EIGHT_PI, single)


def pressure_kernel(x) -> np.ndarray:
    """Π(x) = x / (4π|x|³)."""
    pts, single = _as_points(x)
    rho = _norms(pts)
    return _squeeze(pts / (4.0 * np.pi * rho[:, None] ** 3), single)


def stresslet_contraction(eps, x) -> np.ndarray:
    """Brute-force contraction ε_ki ∂_kΦ_ij (no trace-free assumption)."""
    pts, single = _as_points(x)
    e = np.broadcast_to(np.asarray(eps, dtype=float), (pts.shape[0], 3, 3))
    return _squeeze(np.einsum("mki,mijk->mj", e, oseen_grad(pts)), single)


def stresslet_dir(eps, x) -> np.ndarray:
    """ε_ki ∂_kΦ_ij(x) = −(3/8π)·x_j (x·εx)/|x|⁵ for trace-free symmetric ε."""
    pts, single = _as_points(x)
    e = check_strain(eps)
    e = np.broadcast_to(e, (pts.shape[0], 3, 3))
    rho = _norms(pts)
    q = np.einsum("mi,mij,mj->m", pts, e, pts)
    out = -3.0 / EIGHT_PI * pts * (q / rho ** 5)[:, None]
    return _squeeze(out, single)


# ── Dipoles and rotlets ─────────────────────────────────────────

def dipole_pair_values(points: np.ndarray, centers: np.ndarray, radius: float,
                       strains: np.ndarray) -> np.ndarray:
    """Field of every dipole at every point: shape (M, N, 3)."""
    r = points[:, None, :] - centers[None, :, :]
    rho2 = np.einsum("mna,mna->mn", r, r)
    er = np.einsum("nab,mnb->mna", strains, r)
    interior = rho2 <= (radius * (1.0 + SURFACE_SLACK)) ** 2
    rho = np.sqrt(np.where(interior, radius * radius, rho2))
    q = np.einsum("mna,mna->mn", r, er)
    r3, r5 = radius ** 3, radius ** 5
    inv5 = 1.0 / rho ** 5
    inv7 = inv5 / rho ** 2
    exterior = (2.5 * r3 * (q * inv5)[..., None] * r
                + r5 * (er * inv5[..., None] - 2.5 * (q * inv7)[..., None] * r))
    return np.where(interior[..., None], er, exterior)


def dipole_pair_gradients(points: np.ndarray, centers: np.ndarray, radius: float,
                          strains: np.ndarray) -> np.ndarray:
    """Gradients ∂_k d_j of every dipole at every point: shape (M, N, 3, 3)."""
    r = points[:, None, :] - centers[None, :, :]
    rho2 = np.einsum("mna,mna->mn", r, r)
    er = np.einsum("nab,mnb->mna", strains, r)
    interior = rho2 <= (radius * (1.0 + SURFACE_SLACK)) ** 2
    rho = np.sqrt(np.where(interior, radius * radius, rho2))
    q = np.einsum("mna,mna->mn", r, er)
    r3, r5 = radius ** 3, radius ** 5
    inv5 = (1.0 / rho ** 5)[..., None, None]
    inv7 = inv5 / rho[..., None, None] ** 2
    inv9 = inv7 / rho[..., None, None] ** 2
    qd = q[..., None, None] * _EYE
    r_er = np.einsum("mnj,mnk->mnjk", r, er)
    er_r = np.einsum("mnj,mnk->mnjk", er, r)
    rr_q = np.einsum("mnj,mnk->mnjk", r, r) * q[..., None, None]
    eps = np.broadcast_to(strains[None], r_er.shape)
    leading = 2.5 * r3 * ((qd + 2.0 * r_er) * inv5 - 5.0 * rr_q * inv7)
    remainder = r5 * (eps * inv5 - 5.0 * er_r * inv7
                      - 2.5 * ((qd + 2.0 * r_er) * inv7 - 7.0 * rr_q * inv9))
    return np.where(interior[..., None, None], eps, leading + remainder)


def dipole_field(center, radius: float, strain, x) -> np.ndarray:
    """d(x) for one sphere: ε(x−X) inside, the straining-flow solution outside."""
    pts, single = _as_points(x)
    e = check_strain(strain)
    out = dipole_pair_values(pts, np.asarray(center, float)[None], radius, e[None])[:, 0]
    return _squeeze(out, single)


def dipole_gradient(center, radius: float, strain, x) -> np.ndarray:
    pts, single = _as_points(x)
    e = check_strain(strain)
    out = dipole_pair_gradients(pts, np.asarray(center, float)[None], radius, e[None])[:, 0]
    return _squeeze(out, single)


def dipole_leading_term(center, radius: float, strain, x) -> np.ndarray:
    """The R³ stresslet part of the exterior dipole (no R⁵ remainder)."""
    pts, single = _as_points(x)
    r = pts - np.asarray(center, float)
    rho = _norms(r)
    q = np.einsum("mi,ij,mj->m", r, np.asarray(strain, float), r)
    return _squeeze(2.5 * radius ** 3 * r * (q / rho ** 5)[:, None], single)


def rotlet_field(center, radius: float, omega, x) -> np.ndarray:
    """ω∧(x−X) inside the sphere, R³ω∧(x−X)/|x−X|³ outside."""
    pts, single = _as_points(x)
    r = pts - np.asarray(center, float)
    rho = np.linalg.norm(r, axis=1)
    wr = np.cross(np.broadcast_to(np.asarray(omega, float), r.shape), r)
    interior = rho <= radius * (1.0 + SURFACE_SLACK)
    scale = np.where(interior, 1.0, radius ** 3 / np.maximum(rho, radius) ** 3)
    return _squeeze(wr * scale[:, None], single)


def rotlet_gradient(center, radius: float, omega, x) -> np.ndarray:
    pts, single = _as_points(x)
    r = pts - np.asarray(center, float)
    rho = np.linalg.norm(r, axis=1)
    w = cross_matrix(np.asarray(omega, float))
    wr = r @ w.T
    interior = rho <= radius * (1.0 + SURFACE_SLACK)
    safe = np.maximum(rho, radius)
    exterior = radius ** 3 * (w[None] / safe[:, None, None] ** 3
                              - 3.0 * np.einsum("mj,mk->mjk", wr, r) / safe[:, None, None] ** 5)
    out = np.where(interior[:, None, None], np.broadcast_to(w, exterior.shape), exterior)
    return _squeeze(out, single)


# ── Diagnostics ─────────────────────────────────────────────────

def kernel_difference_decay(kind: str = "oseen", seed: int = 0) -> Tuple[float, float]:
    """Fitted exponents of |g(x−z) − g(X−z)| in |x−X| and in |X−z| for g = Φ or ∇Φ.

    Expected: 1 in the offset, −2 (Φ) or −3 (∇Φ) in the distance.
    """
    kernels = {"oseen": oseen, "oseen_grad": oseen_grad}
    if kind not in kernels:
        raise ValueError(f"kind must be one of {sorted(kernels)}, got {kind!r}")
    kernel = kernels[kind]
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, 3))
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)

    def difference(distance: float, offset: float) -> float:
        return float(np.linalg.norm(kernel(distance * u + offset * v) - kernel(distance * u)))

    offsets = np.geomspace(1e-4, 1e-2, 9)
    distances = np.geomspace(10.0, 1000.0, 9)
    in_offset = np.polyfit(np.log(offsets), np.log([difference(1.0, a) for a in offsets]), 1)[0]
    in_distance = np.polyfit(np.log(distances), np.log([difference(d, 1.0) for d in distances]), 1)[0]
    return float(in_offset), float(in_distance)
