import numpy as np
import pytest

from services.fields import convolution_field
from utils.convolution import KernelConvolver, UniformGrid, pack_symmetric, unpack_symmetric
from utils.stokes_kernels import stresslet_dir


@pytest.fixture
def grid():
    return UniformGrid.covering(-np.ones(3), np.ones(3), 0.125)


def test_covering_grid(grid):
    assert grid.shape == (17, 17, 17)
    np.testing.assert_allclose(grid.upper, np.ones(3))
    assert grid.nodes.shape == (17 ** 3, 3)
    assert grid.contains(np.array([[0.0, 0.0, 0.0], [1.1, 0.0, 0.0]])).tolist() == [True, False]
    padded = UniformGrid.covering(-np.ones(3), np.ones(3), 0.125, margin=0.25)
    np.testing.assert_allclose(padded.origin, -1.25 * np.ones(3))


def test_spline_reproduces_node_values(rng, grid):
    values = rng.normal(size=grid.shape + (2,))
    coefficients = grid.spline(values)
    idx = rng.integers(0, 17, size=(10, 3))
    np.testing.assert_allclose(grid.interpolate(coefficients, grid.origin + grid.spacing * idx),
                               values[idx[:, 0], idx[:, 1], idx[:, 2]], atol=1e-10)


def test_strain_of_linear_field(rng, grid):
    A = rng.normal(size=(3, 3))
    values = (grid.nodes @ A.T).reshape(grid.shape + (3,))
    np.testing.assert_allclose(grid.strain_of(values), np.broadcast_to(A, grid.shape + (3, 3)), atol=1e-12)


def test_symmetric_packing(make_strain):
    eps = make_strain()
    packed = pack_symmetric(eps)
    assert packed.shape == (6,)
    np.testing.assert_array_equal(unpack_symmetric(packed), eps)


def test_unknown_kernel(grid):
    with pytest.raises(ValueError):
        KernelConvolver(grid, "rotlet")


def _blob_source(grid, components):
    """Smooth source supported in the ball of radius 0.4."""
    r2 = np.sum(grid.nodes ** 2, axis=1)
    profile = np.clip(1.0 - r2 / 0.16, 0.0, None) ** 3
    weights = np.linspace(1.0, -0.5, components)
    return (profile[:, None] * weights[None]).reshape(grid.shape + (components,))


@pytest.mark.parametrize("kind,components", [("oseen", 3), ("stresslet", 6)])
def test_fft_matches_direct_sums_off_support(grid, kind, components):
    convolver = KernelConvolver(grid, kind)
    source = _blob_source(grid, components)
    on_grid = convolver.on_grid(source)
    corners = [(0, 0, 0), (16, 3, 8), (2, 15, 16)]
    points = np.array([grid.origin + grid.spacing * np.array(c) for c in corners])
    direct = convolver.direct(source, points)
    expected = np.array([on_grid[c] for c in corners])
    np.testing.assert_allclose(expected, direct, rtol=1e-9, atol=1e-14)

    on_grid_d = convolver.on_grid(source, derivative=True)
    direct_d = convolver.direct(source, points, derivative=True)
    np.testing.assert_allclose(np.array([on_grid_d[c] for c in corners]), direct_d, rtol=1e-9, atol=1e-14)


def test_stresslet_layer_kernel_is_the_stresslet(grid, make_strain):
    eps = make_strain()
    source = np.zeros(grid.shape + (6,))
    source[8, 8, 8] = pack_symmetric(eps)
    node = grid.origin + 8 * grid.spacing
    points = np.array([[0.9, -0.3, 0.2], [-0.5, 0.7, 0.1]])
    direct = KernelConvolver(grid, "stresslet").direct(source, points)
    np.testing.assert_allclose(direct, grid.cell_volume * stresslet_dir(eps, points - node), rtol=1e-12)


def test_oseen_convolution_recovers_manufactured_velocity(force):
    h = 0.05
    grid = UniformGrid.covering(-0.8 * np.ones(3), 0.8 * np.ones(3), h, margin=2 * h)
    source = force(grid.nodes).reshape(grid.shape + (3,))
    v = convolution_field(grid, source, "oseen")

    pts = np.array([[0.2, 0.1, -0.3], [-0.4, 0.3, 0.0], [0.0, -0.5, 0.25]])
    scale = np.max(np.linalg.norm(force.exact_velocity(grid.nodes), axis=1))
    np.testing.assert_allclose(v.value(pts), force.exact_velocity(pts), atol=2e-2 * scale)
    grad_scale = np.max(np.abs(force.exact_gradient(grid.nodes)))
    np.testing.assert_allclose(v.gradient(pts), force.exact_gradient(pts), atol=5e-2 * grad_scale)
    # outside the support the free-space solution vanishes
    assert np.max(np.abs(v.value(np.array([[1.5, 0.0, 0.0]])))) < 2e-2 * scale
