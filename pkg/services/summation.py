"""
Summation — many-body evaluation of Σ_i d_i(x) for straining dipoles.

Direct summation is the reference. The tree mode is an octree with Cartesian
Taylor moments (order ≤ 2) of the strain distribution about each box centre;
a box is accepted when (half-diagonal + R) / distance ≤ θ, otherwise its
children (or, at a leaf, its particles) are visited. Targets are processed in
fixed-size chunks so the output does not depend on the thread count.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from models.strain import DipoleSet, DipoleSpec, SumPlan
from utils.exceptions import AccuracyError
from utils.parallel import blocked_source_sum, chunked_map
from utils.stokes_kernels import dipole_pair_gradients, dipole_pair_values

logger = logging.getLogger(__name__)

_EYE = np.eye(3)
MAX_DEPTH = 21

Dipoles = Union[DipoleSet, Sequence[DipoleSpec]]


def as_dipole_set(dipoles: Dipoles) -> DipoleSet:
    return dipoles if isinstance(dipoles, DipoleSet) else DipoleSet.from_specs(list(dipoles))


# ── Direct summation ────────────────────────────────────────────

def _direct_values(dipoles: DipoleSet, pts: np.ndarray, compensated: bool = False) -> np.ndarray:
    if len(dipoles) == 0 or pts.shape[0] == 0:
        return np.zeros((pts.shape[0], 3))
    c, e, radius = dipoles.centers, dipoles.strains, dipoles.radius
    return blocked_source_sum(
        lambda sl: dipole_pair_values(pts, c[sl], radius, e[sl]).sum(axis=1),
        len(dipoles), compensated=compensated,
    )


def _direct_gradients(dipoles: DipoleSet, pts: np.ndarray, compensated: bool = False) -> np.ndarray:
    if len(dipoles) == 0 or pts.shape[0] == 0:
        return np.zeros((pts.shape[0], 3, 3))
    c, e, radius = dipoles.centers, dipoles.strains, dipoles.radius
    return blocked_source_sum(
        lambda sl: dipole_pair_gradients(pts, c[sl], radius, e[sl]).sum(axis=1),
        len(dipoles), compensated=compensated,
    )


# ── Octree ──────────────────────────────────────────────────────

@dataclass
class _Node:
    center: np.ndarray
    half: float
    start: int
    end: int
    children: List[int] = field(default_factory=list)
    m0: Optional[np.ndarray] = None
    m1: Optional[np.ndarray] = None
    m2: Optional[np.ndarray] = None


def _cubic_derivatives(D: np.ndarray, n: int):
    """T_jab = D_j D_a D_b |D|^{-n} and its first two derivatives (indexed j,a,b,c[,d])."""
    rho2 = np.einsum("pi,pi->p", D, D)
    inv_n = rho2 ** (-0.5 * n)
    inv_n2 = inv_n / rho2
    inv_n4 = inv_n2 / rho2
    d = _EYE
    ddd = np.einsum("pj,pa,pb->pjab", D, D, D)
    t0 = ddd * inv_n[:, None, None, None]

    sym1 = (np.einsum("jc,pa,pb->pjabc", d, D, D)
            + np.einsum("ac,pj,pb->pjabc", d, D, D)
            + np.einsum("bc,pj,pa->pjabc", d, D, D))
    dddd = np.einsum("pjab,pc->pjabc", ddd, D)
    t1 = sym1 * inv_n[:, None, None, None, None] - n * dddd * inv_n2[:, None, None, None, None]

    sym2 = (np.einsum("jc,ad,pb->pjabcd", d, d, D) + np.einsum("jc,bd,pa->pjabcd", d, d, D)
            + np.einsum("ac,jd,pb->pjabcd", d, d, D) + np.einsum("ac,bd,pj->pjabcd", d, d, D)
            + np.einsum("bc,jd,pa->pjabcd", d, d, D) + np.einsum("bc,ad,pj->pjabcd", d, d, D))
    mixed = (np.einsum("pjabc,pd->pjabcd", sym1, D)
             + np.einsum("jd,pa,pb,pc->pjabcd", d, D, D, D)
             + np.einsum("ad,pj,pb,pc->pjabcd", d, D, D, D)
             + np.einsum("bd,pj,pa,pc->pjabcd", d, D, D, D)
             + np.einsum("cd,pjab->pjabcd", d, ddd))
    five = np.einsum("pjabc,pd->pjabcd", dddd, D)
    shape6 = (slice(None),) + (None,) * 5
    t2 = sym2 * inv_n[shape6] - n * mixed * inv_n2[shape6] + n * (n + 2) * five * inv_n4[shape6]
    return t0, t1, t2


def _linear_derivatives(D: np.ndarray):
    """L_b = D_b |D|^{-5} and its first two derivatives."""
    rho2 = np.einsum("pi,pi->p", D, D)
    inv5 = rho2 ** -2.5
    inv7 = inv5 / rho2
    inv9 = inv7 / rho2
    d = _EYE
    l0 = D * inv5[:, None]
    l1 = d[None] * inv5[:, None, None] - 5.0 * np.einsum("pb,pc->pbc", D, D) * inv7[:, None, None]
    l2 = (-5.0 * (np.einsum("bc,pd->pbcd", d, D) + np.einsum("bd,pc->pbcd", d, D)
                  + np.einsum("cd,pb->pbcd", d, D)) * inv7[:, None, None, None]
          + 35.0 * np.einsum("pb,pc,pd->pbcd", D, D, D) * inv9[:, None, None, None])
    return l0, l1, l2


class DipoleTree:
    """Octree over dipole centres with strain moments up to second order."""

    def __init__(self, dipoles: DipoleSet, leaf_size: int = 16, order: int = 2):
        self.radius = dipoles.radius
        self.order = order
        self.leaf_size = max(1, int(leaf_size))
        n = len(dipoles)
        self.perm = np.arange(n)
        self.nodes: List[_Node] = []
        if n == 0:
            self.centers = np.zeros((0, 3))
            self.strains = np.zeros((0, 3, 3))
            return
        lo, hi = dipoles.centers.min(axis=0), dipoles.centers.max(axis=0)
        center = 0.5 * (lo + hi)
        half = 0.5 * float(np.max(hi - lo)) * (1.0 + 1e-12) + 1e-300
        self._src_centers = dipoles.centers
        self._build(center, half, 0, n, 0)
        self.centers = dipoles.centers[self.perm]
        self.strains = dipoles.strains[self.perm]
        for node in self.nodes:
            self._moments(node)
        logger.debug(f"Dipole tree: {n} sources, {len(self.nodes)} nodes")

    def _build(self, center: np.ndarray, half: float, start: int, end: int, depth: int) -> int:
        index = len(self.nodes)
        node = _Node(center=center, half=half, start=start, end=end)
        self.nodes.append(node)
        if end - start <= self.leaf_size or depth >= MAX_DEPTH:
            return index
        idx = self.perm[start:end]
        pts = self._src_centers[idx]
        codes = ((pts[:, 0] > center[0]).astype(int)
                 + 2 * (pts[:, 1] > center[1]).astype(int)
                 + 4 * (pts[:, 2] > center[2]).astype(int))
        order = np.argsort(codes, kind="stable")
        self.perm[start:end] = idx[order]
        codes = codes[order]
        offset = start
        for code in range(8):
            count = int(np.sum(codes == code))
            if count == 0:
                continue
            shift = np.array([(code >> axis) & 1 for axis in range(3)], dtype=float) - 0.5
            child = self._build(center + shift * half, 0.5 * half, offset, offset + count, depth + 1)
            node.children.append(child)
            offset += count
        return index

    def _moments(self, node: _Node):
        s = self.centers[node.start:node.end] - node.center
        e = self.strains[node.start:node.end]
        node.m0 = e.sum(axis=0)
        node.m1 = np.einsum("nab,nc->abc", e, s)
        node.m2 = np.einsum("nab,nc,nd->abcd", e, s, s)

    def _expansion(self, node: _Node, D: np.ndarray) -> np.ndarray:
        r3, r5 = self.radius ** 3, self.radius ** 5
        t5 = _cubic_derivatives(D, 5)
        t7 = _cubic_derivatives(D, 7)
        lin = _linear_derivatives(D)
        moments = (node.m0, node.m1, node.m2)
        signs = (1.0, -1.0, 0.5)
        cubic_sub = ("pjab,ab->pj", "pjabc,abc->pj", "pjabcd,abcd->pj")
        linear_sub = ("pb,jb->pj", "pbc,jbc->pj", "pbcd,jbcd->pj")
        out = np.zeros((D.shape[0], 3))
        for k in range(self.order + 1):
            m, sgn = moments[k], signs[k]
            out += sgn * (2.5 * r3 * np.einsum(cubic_sub[k], t5[k], m)
                          + r5 * (np.einsum(linear_sub[k], lin[k], m)
                                  - 2.5 * np.einsum(cubic_sub[k], t7[k], m)))
        return out

    def evaluate(self, pts: np.ndarray, theta: float) -> np.ndarray:
        out = np.zeros((pts.shape[0], 3))
        if not self.nodes or pts.shape[0] == 0:
            return out
        extent_slack = self.radius
        stack = [(0, np.arange(pts.shape[0]))]
        while stack:
            index, targets = stack.pop()
            node = self.nodes[index]
            D = pts[targets] - node.center
            dist = np.linalg.norm(D, axis=1)
            reach = node.half * np.sqrt(3.0) + extent_slack
            accept = dist * theta >= reach
            if np.any(accept):
                out[targets[accept]] += self._expansion(node, D[accept])
            rest = targets[~accept]
            if rest.size == 0:
                continue
            if not node.children:
                sl = slice(node.start, node.end)
                out[rest] += dipole_pair_values(pts[rest], self.centers[sl], self.radius,
                                                self.strains[sl]).sum(axis=1)
                continue
            for child in reversed(node.children):
                stack.append((child, rest))
        return out


# ── Public API ──────────────────────────────────────────────────

def build_tree(dipoles: Dipoles, plan: SumPlan) -> DipoleTree:
    return DipoleTree(as_dipole_set(dipoles), plan.leaf_size, plan.expansion_order)


def sum_dipoles(dipoles: Dipoles, points, plan: Optional[SumPlan] = None,
                tree: Optional[DipoleTree] = None) -> np.ndarray:
    """Σ_i d_i at every point, shape (M, 3)."""
    plan = plan or SumPlan()
    dset = as_dipole_set(dipoles)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if plan.method == "direct" or len(dset) <= plan.leaf_size:
        return chunked_map(lambda p: _direct_values(dset, p, plan.compensated), pts,
                           plan.threads, plan.chunk_size)

    tree = tree or build_tree(dset, plan)
    result = chunked_map(lambda p: tree.evaluate(p, plan.opening_angle), pts, plan.threads, plan.chunk_size)
    _self_check(dset, pts, result, plan)
    return result


def sum_dipole_gradients(dipoles: Dipoles, points, plan: Optional[SumPlan] = None) -> np.ndarray:
    """Σ_i ∇d_i at every point, shape (M, 3, 3); always direct."""
    plan = plan or SumPlan()
    dset = as_dipole_set(dipoles)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return chunked_map(lambda p: _direct_gradients(dset, p, plan.compensated), pts,
                       plan.threads, plan.chunk_size)


def _self_check(dset: DipoleSet, pts: np.ndarray, result: np.ndarray, plan: SumPlan) -> float:
    """Compare the tree against direct summation on a fixed random sample."""
    m = pts.shape[0]
    if m == 0:
        return 0.0
    count = max(1, int(np.ceil(plan.self_check_fraction * m)))
    rng = np.random.default_rng(0)
    sample = np.sort(rng.choice(m, size=min(count, m), replace=False))
    reference = _direct_values(dset, pts[sample])
    scale = float(np.max(np.linalg.norm(reference, axis=1)))
    error = float(np.max(np.linalg.norm(result[sample] - reference, axis=1)))
    relative = error / scale if scale > 0 else error
    logger.debug(f"Tree self-check on {len(sample)} points: relative error {relative:.3e}")
    if relative > 10.0 * plan.tolerance:
        raise AccuracyError(f"Tree relative error {relative:.3e} exceeds 10× bound {plan.tolerance:g}")
    if relative > plan.tolerance:
        logger.warning(f"Tree relative error {relative:.3e} above bound {plan.tolerance:g}")
    return relative
