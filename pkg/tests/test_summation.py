import numpy as np
import pytest

from models.strain import DipoleSet, DipoleSpec, SumPlan
from services.particle_generator import generate_lattice
from services.summation import build_tree, sum_dipole_gradients, sum_dipoles
from utils.exceptions import AccuracyError
from utils.stokes_kernels import dipole_field, dipole_gradient


@pytest.fixture
def cloud(rng, make_strain):
    """200 small dipoles scattered in the ball of radius 0.5."""
    directions = rng.normal(size=(200, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    centers = directions * 0.5 * rng.random(200)[:, None] ** (1.0 / 3.0)
    strains = np.stack([make_strain() for _ in range(200)])
    return DipoleSet(centers, 0.005, strains)


@pytest.fixture
def far_targets(rng):
    u = rng.normal(size=(60, 3))
    return 5.0 * u / np.linalg.norm(u, axis=1)[:, None]


def test_direct_sum_is_superposition(rng, make_strain):
    specs = [DipoleSpec(rng.normal(size=3), 0.05, make_strain()) for _ in range(3)]
    pts = rng.normal(size=(10, 3)) * 3.0
    expected = sum(dipole_field(s.center, s.radius, s.strain.matrix, pts) for s in specs)
    np.testing.assert_allclose(sum_dipoles(specs, pts), expected, rtol=1e-12, atol=1e-16)
    expected_grad = sum(dipole_gradient(s.center, s.radius, s.strain.matrix, pts) for s in specs)
    np.testing.assert_allclose(sum_dipole_gradients(specs, pts), expected_grad, rtol=1e-12, atol=1e-16)


def test_empty_dipole_set(rng):
    empty = DipoleSet(np.zeros((0, 3)), 0.1, np.zeros((0, 3, 3)))
    np.testing.assert_array_equal(sum_dipoles(empty, rng.normal(size=(4, 3))), np.zeros((4, 3)))


@pytest.mark.parametrize("method", ["direct", "tree"])
def test_bit_identical_across_threads(cloud, far_targets, method):
    serial = SumPlan(method=method, threads=1, chunk_size=16, tolerance=1e-2)
    parallel = SumPlan(method=method, threads=4, chunk_size=16, tolerance=1e-2)
    np.testing.assert_array_equal(sum_dipoles(cloud, far_targets, serial),
                                  sum_dipoles(cloud, far_targets, parallel))


def test_compensated_direct_sum_agrees(cloud, far_targets):
    plain = sum_dipoles(cloud, far_targets, SumPlan())
    compensated = sum_dipoles(cloud, far_targets, SumPlan(compensated=True))
    np.testing.assert_allclose(compensated, plain, rtol=1e-10, atol=1e-18)


class TestTree:
    def _relative_error(self, cloud, targets, order, theta):
        tree = build_tree(cloud, SumPlan(method="tree", expansion_order=order))
        reference = sum_dipoles(cloud, targets)
        error = np.max(np.linalg.norm(tree.evaluate(targets, theta) - reference, axis=1))
        return error / np.max(np.linalg.norm(reference, axis=1))

    def test_tree_matches_direct_far_away(self, cloud, far_targets):
        assert self._relative_error(cloud, far_targets, order=2, theta=0.3) < 2e-2

    def test_higher_order_moments_help(self, cloud, far_targets):
        errors = [self._relative_error(cloud, far_targets, order, 0.3) for order in (0, 1, 2)]
        assert errors[2] < errors[1] < errors[0]

    def test_near_targets_fall_back_to_direct(self, cloud, rng):
        targets = rng.uniform(-0.4, 0.4, size=(40, 3))
        tree = build_tree(cloud, SumPlan(method="tree"))
        # θ small enough that no box is ever accepted
        np.testing.assert_allclose(tree.evaluate(targets, 1e-6), sum_dipoles(cloud, targets),
                                   rtol=1e-10, atol=1e-14)

    def test_self_check_raises_on_gross_error(self, cloud, far_targets):
        plan = SumPlan(method="tree", expansion_order=0, theta=1.0, tolerance=1e-8, self_check_fraction=1.0)
        with pytest.raises(AccuracyError):
            sum_dipoles(cloud, far_targets, plan)

    def test_small_sets_use_direct_summation(self, cloud, far_targets):
        small = DipoleSet(cloud.centers[:10], cloud.radius, cloud.strains[:10])
        plan = SumPlan(method="tree", leaf_size=16, expansion_order=0, theta=1.0, tolerance=1e-12)
        np.testing.assert_array_equal(sum_dipoles(small, far_targets, plan), sum_dipoles(small, far_targets))


class TestOpeningAngle:
    @pytest.mark.parametrize("tolerance,angle", [(1e-2, 0.3), (1e-3, 0.3), (5e-5, 0.1), (1e-6, 0.1), (1e-8, 0.05)])
    def test_follows_the_tolerance(self, tolerance, angle):
        assert SumPlan(tolerance=tolerance).opening_angle == angle
        assert SumPlan(theta=0.7, tolerance=tolerance).opening_angle == 0.7

    def test_tolerance_must_be_positive(self):
        with pytest.raises(ValueError):
            SumPlan(tolerance=0.0)

    @pytest.mark.slow
    def test_default_plan_meets_its_bound_on_a_lattice(self, rng, make_strain):
        lattice = generate_lattice(8, 0.01, seed=3)
        dset = DipoleSet(lattice.centers, lattice.radius, np.stack([make_strain() for _ in range(512)]))
        pts = rng.uniform(-1.0, 1.0, size=(3000, 3))
        pts = pts[lattice.nearest_distance(pts) >= 2.0 * lattice.radius][:1000]
        reference = sum_dipoles(dset, pts)
        scale = np.max(np.linalg.norm(reference, axis=1))
        coarse = sum_dipoles(dset, pts, SumPlan(method="tree", tolerance=1e-3, self_check_fraction=0.05))
        tree = sum_dipoles(dset, pts, SumPlan(method="tree", self_check_fraction=0.05))
        error = np.max(np.linalg.norm(tree - reference, axis=1)) / scale
        assert error <= 1e-6
        assert error < np.max(np.linalg.norm(coarse - reference, axis=1)) / scale
