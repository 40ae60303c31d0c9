import csv

import numpy as np
import pytest

from models.motion import RigidMotion
from models.particles import ParticleConfig
from services.fields import AnalyticField, DipoleCorrectedField, RigidField, sample_strains
from services.particle_generator import generate_lattice
from services.reflections import reflect_until, reflection_step, rigid_projection, write_trace_csv
from utils.exceptions import ContractivityError


def linear_field(A):
    return AnalyticField(lambda p: p @ A.T, lambda p: np.broadcast_to(A, (p.shape[0], 3, 3)).copy())


@pytest.fixture
def single():
    return ParticleConfig(np.array([[0.1, -0.2, 0.3]]), 0.1)


class TestRigidProjection:
    def test_recovers_rigid_motion(self):
        motion = RigidMotion([0.3, -1.0, 0.5], [2.0, 0.0, -1.0], [0.2, 0.1, 0.0])
        projected = rigid_projection(RigidField(motion), motion.center, 0.05)
        np.testing.assert_allclose(projected.velocity, motion.velocity, atol=1e-13)
        np.testing.assert_allclose(projected.omega, motion.omega, atol=1e-12)

    def test_straining_flow_has_no_rigid_part(self, make_strain):
        center = np.array([0.5, 0.0, -0.5])
        e = make_strain()
        fld = AnalyticField(lambda p: (p - center) @ e.T, lambda p: np.broadcast_to(e, (p.shape[0], 3, 3)).copy())
        projected = rigid_projection(fld, center, 0.2)
        np.testing.assert_allclose(projected.velocity, 0.0, atol=1e-14)
        np.testing.assert_allclose(projected.omega, 0.0, atol=1e-13)


class TestReflections:
    def test_single_particle_converges_in_one_step(self, single, make_strain):
        fld, trace = reflect_until(linear_field(make_strain()), single, tol=1e-8, k_max=5)
        assert trace.converged
        assert trace.iterations == 1
        assert trace.residuals[1] < 1e-12 * trace.residuals[0]
        assert isinstance(fld, DipoleCorrectedField)

    def test_lattice_reflections_contract(self, small_lattice, make_strain):
        v = linear_field(make_strain())
        fld, trace = reflect_until(v, small_lattice, tol=1e-6, k_max=12)
        assert trace.converged
        assert all(ratio < 0.5 for ratio in trace.ratios)
        assert len(trace.surface_residuals) == len(trace.residuals)
        remaining = sample_strains(fld, small_lattice).averaged_norms
        assert np.max(remaining) <= 1e-6 * trace.residuals[0] * (1 + 1e-9)
        # the iterate keeps one accumulated dipole per particle
        assert fld.strains.shape == (27, 3, 3)
        assert fld.base is v

    def test_contraction_improves_when_the_volume_fraction_halves(self, make_strain):
        v = linear_field(make_strain())
        ratios = {}
        for phi in (0.01, 0.005):
            _, trace = reflect_until(v, generate_lattice(3, phi, seed=7), tol=1e-6, k_max=12)
            ratios[phi] = max(trace.ratios)
        assert ratios[0.005] < 0.75 * ratios[0.01]

    def test_tolerance_of_one_returns_input(self, small_lattice, make_strain):
        v = linear_field(make_strain())
        fld, trace = reflect_until(v, small_lattice, tol=1.0)
        assert fld is v
        assert trace.converged and trace.residuals == []

    def test_k_max_zero_stops_without_stepping(self, single, make_strain):
        v = linear_field(make_strain())
        fld, trace = reflect_until(v, single, tol=1e-6, k_max=0)
        assert fld is v
        assert not trace.converged
        assert len(trace.residuals) == 1

    def test_growth_raises(self, single, make_strain):
        v = linear_field(make_strain())
        with pytest.raises(ContractivityError):
            reflection_step(v, single, previous_residual=1e-9)


def test_trace_csv(tmp_path, small_lattice, make_strain):
    _, trace = reflect_until(linear_field(make_strain()), small_lattice, tol=1e-4)
    with write_trace_csv(trace, tmp_path / "trace.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "residual", "ratio"]
    assert len(rows) == len(trace.residuals) + 1
    assert rows[1][0] == "0" and rows[1][2] == "nan"
    assert float(rows[2][2]) == pytest.approx(trace.ratios[0], rel=1e-9)
