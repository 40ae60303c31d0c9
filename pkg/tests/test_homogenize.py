import csv

import numpy as np
import pytest

from models.study import HomogenizeOptions
from services.density import coarse_density, mollify_density
from services.fields import manufactured_force
from services.homogenize import (
    _leray_projection, momentum_residual, solve_bar_u, solve_hat_u, solve_hat_v, write_fixed_point_trace,
)
from services.particle_generator import generate_lattice
from utils.exceptions import NonContractive, QuadratureError

pytestmark = pytest.mark.slow

PHI = 0.005
PROBES = np.array([[0.1, 0.2, -0.1], [-0.3, 0.0, 0.25], [0.0, -0.45, 0.1], [1.4, 0.3, -0.2]])


@pytest.fixture(scope="module")
def f():
    return manufactured_force((0.0, 0.0, 1.0), 0.8)


@pytest.fixture(scope="module")
def rho():
    coarse = coarse_density(generate_lattice(3, 0.01, seed=7))
    return mollify_density(coarse, coarse.cube_side)


@pytest.fixture(scope="module")
def opts(rho):
    return HomogenizeOptions(phi=PHI, h=0.5 * rho.cube_side)


@pytest.fixture(scope="module")
def hat_v(f, rho, opts):
    return solve_hat_v(f, rho, opts)


def test_zero_volume_fraction_returns_the_free_solution(f, rho, opts):
    zero = HomogenizeOptions(phi=0.0, h=opts.h)
    v = solve_hat_v(f, rho, zero)
    np.testing.assert_array_equal(v.value(PROBES), f.exact_velocity(PROBES))
    assert solve_hat_u(v, rho, zero) is v
    bar_u, trace = solve_bar_u(f, rho, zero, hat_v=v)
    assert bar_u is v
    assert trace.converged and trace.residuals == [0.0]


def test_hat_v_is_linear_in_phi_and_force(f, rho, opts, hat_v):
    v0 = f.exact_velocity(PROBES)
    doubled = solve_hat_v(f, rho, HomogenizeOptions(phi=2 * PHI, h=opts.h))
    np.testing.assert_allclose(doubled.value(PROBES) - v0, 2.0 * (hat_v.value(PROBES) - v0),
                               rtol=1e-9, atol=1e-14)
    stronger = solve_hat_v(manufactured_force((0.0, 0.0, 3.0), 0.8), rho, opts)
    np.testing.assert_allclose(stronger.value(PROBES), 3.0 * hat_v.value(PROBES), rtol=1e-9, atol=1e-14)
    # the correction has the size φ‖ρ‖∞ relative to the free solution
    shift = np.max(np.abs(hat_v.value(PROBES) - v0))
    assert 0.0 < shift < 10.0 * PHI * rho.sup_norm * np.max(np.abs(v0))


def test_single_fixed_point_step_is_u_hat(f, rho, opts, hat_v):
    u_hat = solve_hat_u(hat_v, rho, opts)
    one_step, trace = solve_bar_u(f, rho, HomogenizeOptions(phi=PHI, h=opts.h, max_iter=1), hat_v=hat_v)
    assert not trace.converged and trace.iterations == 1
    np.testing.assert_allclose(one_step.value(PROBES), u_hat.value(PROBES), rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(one_step.node_gradients, u_hat.node_gradients, rtol=1e-13, atol=1e-15)


def test_fixed_point_converges_and_stays_close_to_u_hat(f, rho, opts, hat_v):
    bar_u, trace = solve_bar_u(f, rho, HomogenizeOptions(phi=PHI, h=opts.h, fixed_point_tol=1e-9), hat_v=hat_v)
    assert trace.converged
    assert trace.residuals[-1] <= 1e-9
    assert all(ratio < 0.9 for ratio in trace.ratios)

    u_hat = solve_hat_u(hat_v, rho, opts)
    first_order = np.max(np.abs(u_hat.value(PROBES) - hat_v.value(PROBES)))
    second_order = np.max(np.abs(u_hat.value(PROBES) - bar_u.value(PROBES)))
    assert first_order > 0.0
    assert second_order < 0.3 * first_order

    assert np.isfinite(momentum_residual(bar_u, f, rho, opts))


def test_large_beta_is_not_contractive(f, rho, opts, hat_v):
    with pytest.raises(NonContractive):
        solve_bar_u(f, rho, HomogenizeOptions(phi=PHI, h=opts.h, max_iter=10), beta=5000.0, hat_v=hat_v)


def test_u_hat_minus_u_bar_is_second_order_in_phi(f, rho, opts, hat_v):
    def gap(phi, v):
        options = HomogenizeOptions(phi=phi, h=opts.h, fixed_point_tol=1e-10)
        bar_u, _ = solve_bar_u(f, rho, options, hat_v=v)
        return np.max(np.abs(solve_hat_u(v, rho, options).value(PROBES) - bar_u.value(PROBES)))

    halved = solve_hat_v(f, rho, HomogenizeOptions(phi=0.5 * PHI, h=opts.h))
    ratio = gap(PHI, hat_v) / gap(0.5 * PHI, halved)
    assert 2.0 <= ratio <= 8.0


class TestLoadLimits:
    def test_loads_from_the_limit_up_are_rejected(self, f, rho, opts, hat_v):
        heavy = HomogenizeOptions(phi=0.41 / rho.sup_norm, h=opts.h)
        with pytest.raises(ValueError):
            solve_hat_v(f, rho, heavy)
        with pytest.raises(ValueError):
            solve_hat_u(hat_v, rho, heavy)
        with pytest.raises(ValueError):
            solve_bar_u(f, rho, heavy, hat_v=hat_v)

    def test_fixed_point_needs_contraction_headroom(self, f, rho, opts):
        loaded = HomogenizeOptions(phi=0.15 / rho.sup_norm, h=opts.h)
        with pytest.raises(NonContractive):
            solve_bar_u(f, rho, loaded)
        # û has no such restriction
        v = solve_hat_v(f, rho, loaded)
        assert np.all(np.isfinite(solve_hat_u(v, rho, loaded).value(PROBES)))


class TestQuadratureEstimate:
    def test_estimates_are_recorded(self, f, rho, opts, hat_v):
        u_hat = solve_hat_u(hat_v, rho, opts)
        bar_u, _ = solve_bar_u(f, rho, HomogenizeOptions(phi=PHI, h=opts.h, max_iter=2), hat_v=hat_v)
        for fld in (hat_v, u_hat, bar_u):
            assert 0.0 < fld.quadrature_error <= opts.quad_tol

    def test_missed_target_raises(self, f, rho, opts, hat_v):
        strict = HomogenizeOptions(phi=PHI, h=opts.h, max_iter=2, quad_tol=1e-12)
        with pytest.raises(QuadratureError):
            solve_hat_v(f, rho, strict)
        with pytest.raises(QuadratureError):
            solve_hat_u(hat_v, rho, strict)
        with pytest.raises(QuadratureError):
            solve_bar_u(f, rho, strict, hat_v=hat_v)

    def test_halving_the_spacing_shrinks_the_estimate(self, f, rho):
        coarse = solve_hat_v(f, rho, HomogenizeOptions(phi=PHI, h=0.25 * rho.cube_side))
        fine = solve_hat_v(f, rho, HomogenizeOptions(phi=PHI, h=0.125 * rho.cube_side))
        assert coarse.quadrature_error >= 3.0 * fine.quadrature_error

    def test_tolerance_must_be_positive(self):
        with pytest.raises(ValueError):
            HomogenizeOptions(phi=PHI, h=0.1, quad_tol=0.0)


class TestLerayProjection:
    shape = (16, 16, 16)
    spacing = 0.1

    def _axes(self):
        n = self.shape[0]
        x = np.arange(n) * self.spacing
        return np.meshgrid(x, x, x, indexing="ij"), 2.0 * np.pi / (n * self.spacing)

    def test_removes_gradients(self):
        (x, y, _), k = self._axes()
        grad = np.stack([k * np.cos(k * x) * np.cos(k * y), -k * np.sin(k * x) * np.sin(k * y),
                         np.zeros_like(x)], axis=-1)
        np.testing.assert_allclose(_leray_projection(grad, self.spacing), 0.0, atol=1e-12)

    def test_keeps_divergence_free_fields(self):
        (_, y, z), k = self._axes()
        u = np.stack([np.sin(k * y), np.cos(k * z), np.zeros_like(y)], axis=-1)
        np.testing.assert_allclose(_leray_projection(u, self.spacing), u, atol=1e-12)


def test_fixed_point_trace_csv(tmp_path, f, rho, opts, hat_v):
    _, trace = solve_bar_u(f, rho, HomogenizeOptions(phi=PHI, h=opts.h, max_iter=3), hat_v=hat_v)
    with write_fixed_point_trace(trace, tmp_path / "fp.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["m", "residual", "ratio"]
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert rows[1][2] == "nan"
