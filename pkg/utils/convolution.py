"""
Grid convolution — Oseen-type kernel sums on a uniform grid.

Convolutions ∫K(x − y) g(y) dy are discretised with the composite midpoint
rule on a uniform grid and evaluated at all grid nodes at once by FFT. The
self cell of the Oseen kernel (integrable |x|⁻¹ singularity) is integrated
exactly by radial substitution over the cube faces; odd kernels (∇Φ and the
stresslet) integrate to zero over the symmetric self cell. Off-grid values
are obtained by cubic spline interpolation inside the grid box and by direct
midpoint sums outside it.
"""

import logging
from functools import cached_property
from typing import Callable, Dict, Tuple

import numpy as np
from scipy import fft, ndimage

from utils.quadrature import cube_inverse_distance_integral
from utils.stokes_kernels import EIGHT_PI, oseen, oseen_grad, oseen_hessian

logger = logging.getLogger(__name__)

# Independent entries of a symmetric 3×3 tensor, in storage order.
SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def pack_symmetric(tensors: np.ndarray) -> np.ndarray:
    """(..., 3, 3) symmetric → (..., 6) in SYM_PAIRS order."""
    return np.stack([tensors[..., a, b] for a, b in SYM_PAIRS], axis=-1)


def unpack_symmetric(packed: np.ndarray) -> np.ndarray:
    out = np.zeros(packed.shape[:-1] + (3, 3))
    for p, (a, b) in enumerate(SYM_PAIRS):
        out[..., a, b] = packed[..., p]
        out[..., b, a] = packed[..., p]
    return out


class UniformGrid:
    """Nodes origin + h·(i, j, k), 0 ≤ i < shape[0] etc."""

    def __init__(self, origin, spacing: float, shape: Tuple[int, int, int]):
        self.origin = np.asarray(origin, dtype=float)
        self.spacing = float(spacing)
        self.shape = tuple(int(s) for s in shape)

    @classmethod
    def covering(cls, lo, hi, spacing: float, margin: float = 0.0) -> "UniformGrid":
        """Smallest grid of the given spacing covering [lo − margin, hi + margin]."""
        lo = np.asarray(lo, dtype=float) - margin
        hi = np.asarray(hi, dtype=float) + margin
        shape = np.maximum(np.ceil((hi - lo) / spacing).astype(int) + 1, 2)
        return cls(lo, spacing, tuple(shape))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.shape) - 1)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    @cached_property
    def nodes(self) -> np.ndarray:
        axes = [self.origin[d] + self.spacing * np.arange(self.shape[d]) for d in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.all((pts >= self.origin) & (pts <= self.upper), axis=1)

    def spline(self, values: np.ndarray) -> np.ndarray:
        """Cubic spline coefficients of node values shaped shape + (c,)."""
        flat = values.reshape(self.shape + (-1,))
        return np.stack([ndimage.spline_filter(flat[..., c], order=3, mode="nearest")
                         for c in range(flat.shape[-1])], axis=-1)

    def interpolate(self, coefficients: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate spline ``coefficients`` (from :meth:`spline`) at ``points``."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        coords = ((pts - self.origin) / self.spacing).T
        return np.stack([ndimage.map_coordinates(coefficients[..., c], coords, order=3,
                                                 mode="nearest", prefilter=False)
                         for c in range(coefficients.shape[-1])], axis=-1)

    def strain_of(self, values: np.ndarray) -> np.ndarray:
        """Second-order FD gradient of node values (shape + (3,)) → shape + (3, 3)."""
        grads = [np.stack(np.gradient(values[..., j], self.spacing, edge_order=2), axis=-1)
                 for j in range(3)]
        return np.stack(grads, axis=-2)


def _oseen_kernel(offsets: np.ndarray) -> np.ndarray:
    return oseen(offsets)


def _oseen_derivative_kernel(offsets: np.ndarray) -> np.ndarray:
    g = oseen_grad(offsets)  # [p, i, j, k]
    return np.transpose(g, (0, 1, 3, 2)).reshape(-1, 9, 3)  # out (i, k), in j


def _stresslet_kernel(offsets: np.ndarray) -> np.ndarray:
    g = oseen_grad(offsets)  # [p, i, j, k] = ∂_k Φ_ij
    cols = []
    for k, i in SYM_PAIRS:
        col = g[:, i, :, k]
        if k != i:
            col = col + g[:, k, :, i]
        cols.append(col)
    return np.stack(cols, axis=-1)  # out j, in pair


def _stresslet_derivative_kernel(offsets: np.ndarray) -> np.ndarray:
    h = oseen_hessian(offsets)  # [p, i, j, k, m] = ∂_m ∂_k Φ_ij
    cols = []
    for k, i in SYM_PAIRS:
        col = h[:, i, :, k, :]
        if k != i:
            col = col + h[:, k, :, i, :]
        cols.append(col.reshape(-1, 9))
    return np.stack(cols, axis=-1)  # out (j, m), in pair


_KERNELS: Dict[Tuple[str, bool], Callable[[np.ndarray], np.ndarray]] = {
    ("oseen", False): _oseen_kernel,
    ("oseen", True): _oseen_derivative_kernel,
    ("stresslet", False): _stresslet_kernel,
    ("stresslet", True): _stresslet_derivative_kernel,
}


class KernelConvolver:
    """Midpoint-rule convolution of a kernel with node values of a UniformGrid.

    ``kind`` is ``"oseen"`` (source: force density, 3 components) or
    ``"stresslet"`` (source: symmetric strain density packed to 6 components,
    kernel ε_ki ∂_kΦ_ij). ``derivative=True`` differentiates the result.
    """

    def __init__(self, grid: UniformGrid, kind: str):
        if kind not in ("oseen", "stresslet"):
            raise ValueError(f"Unknown kernel kind '{kind}'")
        self.grid = grid
        self.kind = kind
        self._hat: Dict[bool, np.ndarray] = {}
        self.fft_shape = tuple(fft.next_fast_len(2 * n - 1, real=True) for n in grid.shape)

    def _self_cell(self, derivative: bool, n_out: int, n_in: int) -> np.ndarray:
        if self.kind == "oseen" and not derivative:
            value = 4.0 / 3.0 * cube_inverse_distance_integral(self.grid.spacing) / EIGHT_PI
            return value * np.eye(3)
        return np.zeros((n_out, n_in))

    def _kernel_hat(self, derivative: bool) -> np.ndarray:
        if derivative in self._hat:
            return self._hat[derivative]
        h = self.grid.spacing
        ranges = [np.arange(-(n - 1), n) for n in self.grid.shape]
        mesh = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1)
        offsets = mesh.reshape(-1, 3) * h
        zero = np.all(mesh.reshape(-1, 3) == 0, axis=1)
        offsets[zero] = (h, 0.0, 0.0)
        values = _KERNELS[(self.kind, derivative)](offsets) * self.grid.cell_volume
        n_out, n_in = values.shape[1], values.shape[2]
        values[zero] = self._self_cell(derivative, n_out, n_in)
        values = values.reshape(tuple(2 * n - 1 for n in self.grid.shape) + (n_out, n_in))

        circ = np.zeros(self.fft_shape + (n_out, n_in))
        index = [r % p for r, p in zip(ranges, self.fft_shape)]
        circ[np.ix_(*index)] = values
        hat = fft.rfftn(circ, s=self.fft_shape, axes=(0, 1, 2))
        self._hat[derivative] = hat
        logger.debug(f"Kernel '{self.kind}' (derivative={derivative}) transformed on {self.fft_shape}")
        return hat

    def on_grid(self, source: np.ndarray, derivative: bool = False) -> np.ndarray:
        """Convolution at every node; ``source`` has shape grid.shape + (n_in,)."""
        hat = self._kernel_hat(derivative)
        src_hat = fft.rfftn(source, s=self.fft_shape, axes=(0, 1, 2))
        out_hat = np.einsum("xyzoi,xyzi->xyzo", hat, src_hat)
        out = fft.irfftn(out_hat, s=self.fft_shape, axes=(0, 1, 2))
        nx, ny, nz = self.grid.shape
        return np.ascontiguousarray(out[:nx, :ny, :nz])

    def direct(self, source: np.ndarray, points: np.ndarray, derivative: bool = False,
               block: int = 2048) -> np.ndarray:
        """Midpoint sums at ``points`` (which must stay away from the source support)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        flat = source.reshape(-1, source.shape[-1])
        active = np.any(flat != 0.0, axis=1)
        nodes, values = self.grid.nodes[active], flat[active]
        kernel = _KERNELS[(self.kind, derivative)]
        n_out = 9 if derivative else 3
        out = np.zeros((pts.shape[0], n_out))
        if nodes.shape[0] == 0 or pts.shape[0] == 0:
            return out
        for p in range(pts.shape[0]):
            partial = []
            for start in range(0, nodes.shape[0], block):
                sl = slice(start, start + block)
                k = kernel(pts[p] - nodes[sl])
                partial.append(np.einsum("poi,pi->o", k, values[sl]))
            out[p] = np.sum(np.stack(partial), axis=0) * self.grid.cell_volume
        return out
