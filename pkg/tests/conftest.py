import numpy as np
import pytest

from services.fields import manufactured_force
from services.particle_generator import generate_lattice


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def force():
    return manufactured_force((0.0, 0.0, 1.0), 0.8)


@pytest.fixture
def small_lattice():
    # 27 spheres, R ≈ 0.072, spacing ≈ 0.36
    return generate_lattice(3, 0.01, seed=7)


@pytest.fixture
def log_dir(tmp_path, monkeypatch):
    """Keep CLI log files inside the test's temporary directory."""
    logs = tmp_path / "logs"
    monkeypatch.setenv("LOG_DIR", str(logs))
    monkeypatch.chdir(tmp_path)
    return logs


@pytest.fixture
def make_strain(rng):
    """Random symmetric trace-free 3×3 strains."""

    def make() -> np.ndarray:
        a = rng.normal(size=(3, 3))
        s = 0.5 * (a + a.T)
        return s - np.trace(s) / 3.0 * np.eye(3)

    return make
