import numpy as np
import pytest

from utils.exceptions import SingularPointError, StrainError
from utils.stokes_kernels import (
    EIGHT_PI, dipole_field, dipole_gradient, dipole_leading_term, kernel_difference_decay, oseen,
    oseen_grad, oseen_hessian, pressure_kernel, rotlet_field, rotlet_gradient, stresslet_contraction,
    stresslet_dir,
)

E1, E2, E3 = np.eye(3)


def fd_jacobian(fn, x, step=1e-5):
    """Central differences stacked on a trailing axis."""
    return np.stack([(fn(x + step * e) - fn(x - step * e)) / (2 * step) for e in np.eye(3)], axis=-1)


def test_oseen_on_axis():
    np.testing.assert_allclose(oseen(E1), np.diag([2.0, 1.0, 1.0]) / EIGHT_PI, atol=1e-15)


def test_oseen_is_symmetric_and_divergence_free(rng):
    pts = rng.normal(size=(20, 3))
    phi = oseen(pts)
    np.testing.assert_allclose(phi, np.swapaxes(phi, 1, 2), atol=1e-15)
    # Σ_k ∂_k Φ_kj
    div = np.einsum("mkjk->mj", oseen_grad(pts))
    assert np.max(np.abs(div)) < 1e-14


@pytest.mark.parametrize("scale", [0.1, 2.0, 37.0])
def test_homogeneity(rng, scale):
    x = rng.normal(size=3)
    np.testing.assert_allclose(oseen(scale * x) * scale, oseen(x), rtol=1e-12)
    np.testing.assert_allclose(oseen_grad(scale * x) * scale ** 2, oseen_grad(x), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(oseen_hessian(scale * x) * scale ** 3, oseen_hessian(x), rtol=1e-12, atol=1e-15)


def test_oseen_grad_index_convention():
    assert oseen_grad(E1)[0, 0, 0] == pytest.approx(-1.0 / (4.0 * np.pi), rel=1e-14)


def test_derivatives_match_finite_differences(rng):
    x = rng.normal(size=3)
    x /= np.linalg.norm(x)
    np.testing.assert_allclose(fd_jacobian(oseen, x), oseen_grad(x), atol=1e-8)
    np.testing.assert_allclose(fd_jacobian(oseen_grad, x), oseen_hessian(x), atol=1e-8)


def test_pressure_kernel():
    np.testing.assert_allclose(pressure_kernel(E3), E3 / (4 * np.pi), atol=1e-15)
    x = np.array([0.3, -0.4, 1.2])
    potential = lambda p: np.array(1.0 / (4.0 * np.pi * np.linalg.norm(p)))  # noqa: E731
    np.testing.assert_allclose(-fd_jacobian(potential, x), pressure_kernel(x), atol=1e-9)


def test_batch_and_single_point_agree(rng):
    pts = rng.normal(size=(5, 3))
    batch = oseen_grad(pts)
    for p, expected in zip(pts, batch):
        np.testing.assert_allclose(oseen_grad(p), expected, rtol=1e-14, atol=1e-16)


def test_singular_point_rejected():
    with pytest.raises(SingularPointError):
        oseen(np.zeros(3))
    with pytest.raises(SingularPointError):
        oseen_grad(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))


class TestStresslet:
    def test_closed_form_matches_contraction(self, rng, make_strain):
        for _ in range(25):
            eps = make_strain()
            y = rng.normal(size=3)
            np.testing.assert_allclose(stresslet_dir(eps, y), stresslet_contraction(eps, y), rtol=1e-12, atol=1e-15)

    def test_axial_strain_on_axis(self):
        eps = np.diag([1.0, -0.5, -0.5])
        np.testing.assert_allclose(stresslet_dir(eps, 2.0 * E1), -3.0 / EIGHT_PI * E1 / 4.0, atol=1e-15)
        # x·εx = 0 on the cone where the strain vanishes
        x = np.array([1.0, np.sqrt(2.0), 0.0])
        assert np.max(np.abs(stresslet_dir(eps, x))) < 1e-15

    @pytest.mark.parametrize("bad", [np.eye(3), np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0.0]])])
    def test_rejects_non_trace_free_or_asymmetric(self, bad):
        with pytest.raises(StrainError):
            stresslet_dir(bad, E1)


class TestDipole:
    R = 0.1

    def test_interior_is_linear_strain(self, rng, make_strain):
        eps = make_strain()
        pts = rng.uniform(-0.05, 0.05, size=(10, 3))
        np.testing.assert_allclose(dipole_field(np.zeros(3), self.R, eps, pts), pts @ eps.T, atol=1e-15)
        np.testing.assert_allclose(dipole_gradient(np.zeros(3), self.R, eps, pts),
                                   np.broadcast_to(eps, (10, 3, 3)), atol=1e-15)

    def test_continuous_across_surface(self, rng, make_strain):
        eps = make_strain()
        u = rng.normal(size=(8, 3))
        u /= np.linalg.norm(u, axis=1)[:, None]
        inside = dipole_field(np.zeros(3), self.R, eps, self.R * (1 - 1e-9) * u)
        outside = dipole_field(np.zeros(3), self.R, eps, self.R * (1 + 1e-9) * u)
        np.testing.assert_allclose(inside, outside, atol=1e-8)

    def test_exterior_gradient_and_divergence(self, rng, make_strain):
        eps = make_strain()
        center = np.array([0.2, -0.1, 0.3])
        for _ in range(5):
            u = rng.normal(size=3)
            x = center + rng.uniform(1.5, 4.0) * self.R * u / np.linalg.norm(u)
            fd = fd_jacobian(lambda p: dipole_field(center, self.R, eps, p), x, step=1e-7)
            grad = dipole_gradient(center, self.R, eps, x)
            np.testing.assert_allclose(fd, grad, atol=1e-6)
            assert abs(np.trace(grad)) < 1e-12

    def test_far_field_is_the_stresslet_term(self, make_strain):
        eps = make_strain()
        radii = np.geomspace(10 * self.R, 1000 * self.R, 6)
        pts = radii[:, None] * np.array([0.6, 0.0, 0.8])
        full = dipole_field(np.zeros(3), self.R, eps, pts)
        leading = dipole_leading_term(np.zeros(3), self.R, eps, pts)
        relative = np.linalg.norm(full - leading, axis=1) / np.linalg.norm(leading, axis=1)
        np.testing.assert_allclose(relative * (radii / self.R) ** 2, relative[0] * 100.0, rtol=1e-6)
        # the stresslet term equals −(4π/3)R³·5 ε_ki ∂_kΦ_ij
        np.testing.assert_allclose(leading, -20.0 * np.pi / 3.0 * self.R ** 3 * stresslet_dir(eps, pts),
                                   rtol=1e-12)


class TestRotlet:
    def test_surface_value_and_decay(self):
        omega = np.array([0.0, 0.0, 2.0])
        R = 0.2
        np.testing.assert_allclose(rotlet_field(np.zeros(3), R, omega, R * E1), np.cross(omega, R * E1),
                                   atol=1e-15)
        far = rotlet_field(np.zeros(3), R, omega, np.array([2.0, 4.0]).reshape(2, 1) * E1)
        assert np.linalg.norm(far[0]) / np.linalg.norm(far[1]) == pytest.approx(4.0, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        omega = np.array([0.3, -1.0, 0.5])
        R = 0.2
        x = np.array([0.3, 0.25, -0.1])
        fd = fd_jacobian(lambda p: rotlet_field(np.zeros(3), R, omega, p), x, step=1e-7)
        np.testing.assert_allclose(fd, rotlet_gradient(np.zeros(3), R, omega, x), atol=1e-7)


@pytest.mark.parametrize("kind,distance_exponent", [("oseen", -2.0), ("oseen_grad", -3.0)])
def test_kernel_difference_decay(kind, distance_exponent):
    in_offset, in_distance = kernel_difference_decay(kind, seed=3)
    assert in_offset == pytest.approx(1.0, abs=0.1)
    assert in_distance == pytest.approx(distance_exponent, abs=0.1)


def test_kernel_difference_decay_rejects_unknown_kind():
    with pytest.raises(ValueError):
        kernel_difference_decay("stresslet")
