import numpy as np
import pytest

from models.motion import RigidMotion
from models.particles import ParticleConfig
from services.fields import (
    AnalyticField, BallCorrectionField, DipoleCorrectedField, RigidField, SumField, ZeroField,
    background_velocity, explicit_dipole_approx, finite_difference_divergence, finite_difference_gradient,
    finite_difference_laplacian, gradient_oscillation, manufactured_force, momentum_residual_exterior,
    read_field_samples, read_sample_points, sample_strains, strain_at_centers, write_field_samples, write_sample_points,
)
from utils.exceptions import StrainError
from utils.quadrature import ball_rule
from utils.stokes_kernels import dipole_field, oseen


def linear_field(A):
    return AnalyticField(lambda p: p @ A.T, lambda p: np.broadcast_to(A, (p.shape[0], 3, 3)).copy(),
                         label="linear")


class TestManufacturedForce:
    def test_force_is_minus_laplacian_of_velocity(self, rng, force):
        pts = rng.uniform(-0.35, 0.35, size=(20, 3))
        lap = finite_difference_laplacian(force.exact_velocity, pts, step=1e-3)
        np.testing.assert_allclose(-lap, force(pts), atol=1e-3 * force.sup_norm)

    def test_velocity_is_divergence_free_with_exact_gradient(self, rng, force):
        pts = rng.uniform(-0.5, 0.5, size=(20, 3))
        fd = finite_difference_gradient(force.exact_velocity, pts, step=1e-6)
        np.testing.assert_allclose(fd, force.exact_gradient(pts), atol=1e-6)
        assert np.max(np.abs(np.trace(force.exact_gradient(pts), axis1=1, axis2=2))) < 1e-12

    def test_compact_support_and_bounds(self, rng, force):
        outside = rng.normal(size=(10, 3))
        outside = 0.81 * outside / np.linalg.norm(outside, axis=1)[:, None]
        np.testing.assert_array_equal(force(outside), 0.0)
        pts = rng.uniform(-0.8, 0.8, size=(2000, 3))
        assert np.max(np.linalg.norm(force(pts), axis=1)) <= force.sup_norm * (1 + 1e-6)
        assert force.is_manufactured
        assert np.isfinite(force.holder_constant)

    def test_linear_in_amplitude(self, rng):
        pts = rng.uniform(-0.5, 0.5, size=(5, 3))
        a = manufactured_force((1.0, 0.0, 0.0))(pts)
        b = manufactured_force((0.0, 2.0, 0.0))(pts)
        np.testing.assert_allclose(manufactured_force((1.0, 2.0, 0.0))(pts), a + b, rtol=1e-12, atol=1e-12)

    def test_support_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            manufactured_force(support_radius=0.0)


class TestCompositeFields:
    def test_zero_rigid_and_sum(self, rng):
        pts = rng.normal(size=(6, 3))
        motion = RigidMotion([1.0, 0.0, 0.0], [0.0, 0.0, 2.0], [0.1, 0.0, 0.0])
        rigid = RigidField(motion)
        np.testing.assert_allclose(rigid.value(pts), motion.velocity + np.cross(motion.omega, pts - motion.center))
        np.testing.assert_allclose(finite_difference_gradient(rigid, pts), rigid.gradient(pts), atol=1e-9)
        np.testing.assert_allclose(rigid.symmetric_gradient(pts), 0.0, atol=1e-15)

        combo = SumField([(2.0, rigid), (-1.0, ZeroField())])
        np.testing.assert_allclose(combo.value(pts), 2.0 * rigid.value(pts))
        np.testing.assert_allclose(combo.pressure(pts), 0.0)
        assert "rigid" in combo.describe()

    def test_dipole_corrected_field(self, rng, small_lattice, make_strain):
        A = make_strain()
        strains = np.stack([make_strain() for _ in range(27)])
        strains[4] = 0.0
        fld = DipoleCorrectedField(linear_field(A), small_lattice.centers, small_lattice.radius, strains)
        assert len(fld.dipoles) == 26
        pts = rng.normal(size=(5, 3)) * 2.0
        expected = pts @ A.T - sum(dipole_field(c, small_lattice.radius, e, pts)
                                   for c, e in zip(small_lattice.centers, strains) if np.any(e))
        np.testing.assert_allclose(fld.value(pts), expected, rtol=1e-12, atol=1e-14)


class TestStrainSampling:
    @pytest.mark.parametrize("mode", ["point", "surface_avg"])
    def test_linear_flow_strain(self, small_lattice, rng, mode):
        A = rng.normal(size=(3, 3))
        A -= np.trace(A) / 3.0 * np.eye(3)
        strains = strain_at_centers(linear_field(A), small_lattice, mode)
        np.testing.assert_allclose(strains, np.broadcast_to(0.5 * (A + A.T), (27, 3, 3)), atol=1e-14)

    def test_compressible_field_rejected(self, small_lattice):
        with pytest.raises(StrainError):
            sample_strains(linear_field(np.eye(3)), small_lattice)

    def test_unknown_mode(self, small_lattice):
        with pytest.raises(ValueError):
            sample_strains(ZeroField(), small_lattice, mode="volume")

    def test_explicit_dipole_approx_cancels_strain_on_the_surface(self, make_strain):
        A = make_strain()
        v = linear_field(A)
        single = ParticleConfig(np.array([[0.1, -0.2, 0.3]]), 0.1)
        u_tilde = explicit_dipole_approx(v, single, strain_at_centers(v, single, "point"))
        # on the sphere the dipole equals the straining part of v
        sample = sample_strains(u_tilde, single)
        assert np.max(sample.averaged_norms) < 1e-12
        with pytest.raises(ValueError):
            explicit_dipole_approx(v, single, np.zeros((3, 3, 3)))

    def test_explicit_dipole_approx_is_a_stokes_flow_outside_the_ball(self, rng, make_strain):
        v = linear_field(make_strain())
        single = ParticleConfig(np.zeros((1, 3)), 0.1)
        u_tilde = explicit_dipole_approx(v, single, strain_at_centers(v, single, "point"))
        dirs = rng.normal(size=(8, 3))
        pts = rng.uniform(0.5, 0.8, size=(8, 1)) * dirs / np.linalg.norm(dirs, axis=1)[:, None]
        assert np.max(momentum_residual_exterior(u_tilde, pts, step=5e-3)) < 1e-2
        # a non-Stokes flow with Δu = (0, 0, 2x) has curl Δu = (0, −2, 0)
        shear = AnalyticField(lambda p: np.stack([0 * p[:, 0], 0 * p[:, 0], p[:, 0] ** 3 / 3.0], axis=1),
                              lambda p: np.zeros((p.shape[0], 3, 3)))
        np.testing.assert_allclose(momentum_residual_exterior(shear, pts), 2.0, rtol=1e-4)

    def test_gradient_oscillation(self, small_lattice, make_strain):
        osc = gradient_oscillation(linear_field(make_strain()), small_lattice, [0.05, 0.1])
        assert osc == {0.05: 0.0, 0.1: 0.0}


class TestBackground:
    def test_full_background_is_the_exact_solution(self, rng, force):
        v = background_velocity(force)
        pts = rng.uniform(-0.5, 0.5, size=(4, 3))
        np.testing.assert_array_equal(v.value(pts), force.exact_velocity(pts))

    def test_mode_validation(self, force):
        with pytest.raises(ValueError):
            background_velocity(force, mode="punctured")
        with pytest.raises(ValueError):
            background_velocity(force, mode="half")

    def test_balls_outside_the_support_are_ignored(self, force):
        cfg = ParticleConfig(np.array([[0.0, 0.0, 0.95]]), 0.02)
        corrections = BallCorrectionField(force, cfg)
        assert corrections.centers.shape == (0, 3)
        np.testing.assert_array_equal(corrections.value(np.zeros((2, 3))), 0.0)

    def test_far_branch_matches_ball_rule(self, force):
        R = 0.05
        centre = np.array([0.3, 0.1, -0.2])
        cfg = ParticleConfig(centre[None], R)
        moments = BallCorrectionField(force, cfg, far_ratio=6.0)
        product = BallCorrectionField(force, cfg, far_ratio=1e6)
        x = centre + np.array([[8 * R, 0.0, 0.0], [0.0, -10 * R, 3 * R]])
        offsets, weights = ball_rule(R)
        reference = np.einsum("m,mij,mj->i", weights, oseen(x[0] - centre - offsets), force(centre + offsets))
        np.testing.assert_allclose(product.value(x)[0], reference, rtol=1e-12)
        near = product.value(x)
        np.testing.assert_allclose(moments.value(x), near, atol=1e-2 * np.max(np.abs(near)))

    def test_punctured_background_inside_a_ball_is_continuous(self, force):
        R = 0.05
        centre = np.array([0.2, -0.1, 0.1])
        v = background_velocity(force, ParticleConfig(centre[None], R), mode="punctured")
        u = np.array([1.0, 2.0, -2.0]) / 3.0
        inside = v.value(centre + R * (1 - 1e-6) * u)
        outside = v.value(centre + R * (1 + 1e-6) * u)
        np.testing.assert_allclose(inside, outside, rtol=1e-2, atol=1e-5)

    def test_punctured_background_is_divergence_free(self, force):
        cfg = ParticleConfig(np.array([[0.2, -0.1, 0.1]]), 0.05)
        v = background_velocity(force, cfg, mode="punctured")
        pts = np.array([[0.2, -0.1, 0.25], [0.35, 0.0, 0.1], [0.2, 0.05, 0.0]])
        assert np.max(np.abs(np.trace(v.gradient(pts), axis1=1, axis2=2))) < 1e-10
        np.testing.assert_allclose(finite_difference_divergence(v, pts, step=1e-5), 0.0, atol=1e-5)


def test_sample_files_round_trip(tmp_path, rng, force):
    pts = rng.normal(size=(7, 3))
    v = background_velocity(force)
    read_pts, values = read_field_samples(write_field_samples(v, pts, tmp_path / "v.csv"))
    np.testing.assert_array_equal(read_pts, pts)
    np.testing.assert_array_equal(values, v.value(pts))
    np.testing.assert_array_equal(read_sample_points(write_sample_points(pts, tmp_path / "p.csv")), pts)
    (tmp_path / "bad.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_sample_points(tmp_path / "bad.csv")
