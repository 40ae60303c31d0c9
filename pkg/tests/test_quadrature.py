import numpy as np
import pytest

from utils.quadrature import (
    SUPPORTED_ANGULAR_ORDERS, ball_rule, cube_inverse_distance_integral, gauss_legendre, lebedev_degree,
    lebedev_rule,
)


@pytest.mark.parametrize("order", SUPPORTED_ANGULAR_ORDERS)
def test_lebedev_rule_shape_and_normalisation(order):
    dirs, weights = lebedev_rule(order)
    assert dirs.shape == (order, 3)
    assert weights.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-15)
    # the odd moments vanish by symmetry, the quadratic one is exact for every rule
    np.testing.assert_allclose(weights @ dirs, 0.0, atol=1e-15)
    np.testing.assert_allclose(weights @ dirs[:, 0] ** 2, 1.0 / 3.0, atol=1e-14)


@pytest.mark.parametrize("order", [o for o in SUPPORTED_ANGULAR_ORDERS if o >= 14])
def test_lebedev_quartic_moments(order):
    dirs, weights = lebedev_rule(order)
    x, y = dirs[:, 0], dirs[:, 1]
    assert weights @ x ** 4 == pytest.approx(1.0 / 5.0, abs=1e-13)
    assert weights @ (x ** 2 * y ** 2) == pytest.approx(1.0 / 15.0, abs=1e-13)


def test_lebedev_26_is_exact_to_degree_seven():
    dirs, weights = lebedev_rule(26)
    x, y, z = dirs.T
    # mean of x²y²z² over the sphere is 1/105, degree 6
    assert weights @ (x * y * z) ** 2 == pytest.approx(1.0 / 105.0, abs=1e-13)
    assert weights @ (x ** 6) == pytest.approx(1.0 / 7.0, abs=1e-13)


@pytest.mark.parametrize("order", SUPPORTED_ANGULAR_ORDERS)
def test_lebedev_highest_even_moment(order):
    dirs, weights = lebedev_rule(order)
    degree = lebedev_degree(order)
    # mean of x^(d−1) over the sphere is 1/d for odd d
    assert weights @ dirs[:, 2] ** (degree - 1) == pytest.approx(1.0 / degree, abs=1e-12)


def test_lebedev_rejects_unknown_order_and_is_read_only():
    with pytest.raises(ValueError):
        lebedev_rule(27)
    dirs, _ = lebedev_rule(26)
    with pytest.raises(ValueError):
        dirs[0, 0] = 2.0


def test_gauss_legendre_is_exact_for_degree_2n_minus_1():
    x, w = gauss_legendre(5, 0.0, 2.0)
    assert w @ x ** 9 == pytest.approx(2.0 ** 10 / 10.0, rel=1e-13)


def test_ball_rule_volume_and_second_moment():
    R = 0.3
    offsets, weights = ball_rule(R)
    assert weights.sum() == pytest.approx(4.0 * np.pi / 3.0 * R ** 3, rel=1e-13)
    r2 = np.sum(offsets ** 2, axis=1)
    assert weights @ r2 == pytest.approx(4.0 * np.pi * R ** 5 / 5.0, rel=1e-12)
    assert np.max(np.linalg.norm(offsets, axis=1)) < R


def test_cube_inverse_distance_integral():
    unit = cube_inverse_distance_integral(1.0)
    assert unit == pytest.approx(2.38, rel=1e-2)
    assert cube_inverse_distance_integral(0.5) == pytest.approx(0.25 * unit, rel=1e-14)

    n = 60
    axis = (np.arange(n) + 0.5) / n - 0.5
    mids = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    midpoint = np.sum(1.0 / np.linalg.norm(mids, axis=1)) / n ** 3
    assert unit == pytest.approx(midpoint, rel=2e-2)
