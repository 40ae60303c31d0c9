import csv
import json

import numpy as np
import pytest

from cli.commands import EXIT_FAILED, EXIT_OK, EXIT_USAGE, run_cli
from config.default_config import DEFAULT_CONFIG
from config.run_config import RunConfig
from services.fields import AnalyticField, ZeroField, write_field_samples
from services.particle_io import read_config


@pytest.fixture
def particles(log_dir, tmp_path):
    path = tmp_path / "particles.ssl"
    assert run_cli(["--seed", "3", "gen", "-n", "27", "--phi", "0.01", "-o", str(path)]) == EXIT_OK
    return path


class TestGen:
    def test_lattice(self, particles):
        cfg = read_config(particles)
        assert cfg.n_particles == 27
        assert cfg.phi == pytest.approx(0.01)
        assert cfg.seed == 3

    def test_rsa(self, log_dir, tmp_path):
        path = tmp_path / "rsa.ssl"
        assert run_cli(["gen", "-n", "12", "--generator", "rsa", "--phi", "0.005", "-o", str(path)]) == EXIT_OK
        assert read_config(path).n_particles == 12

    def test_lattice_needs_a_cube(self, log_dir, tmp_path):
        assert run_cli(["gen", "-n", "10", "-o", str(tmp_path / "x.ssl")]) == EXIT_USAGE

    def test_template(self, log_dir, tmp_path):
        path = tmp_path / "study.ini"
        assert run_cli(["gen", "--template", "-o", str(path)]) == EXIT_OK
        assert RunConfig.from_file(path).values == DEFAULT_CONFIG

    def test_log_file_written(self, particles, log_dir):
        assert any(log_dir.glob("evlab_*.log"))


def test_validate(particles, capsys):
    assert run_cli(["validate", "--particles", str(particles)]) == EXIT_OK
    assert "dilution" in capsys.readouterr().out
    assert run_cli(["validate", "--particles", str(particles), "--eps", "1e-6"]) == EXIT_FAILED


def test_selftest_kernels(log_dir, capsys):
    assert run_cli(["selftest", "kernels"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "checks passed" in out


class TestNorms:
    @pytest.fixture
    def samples(self, log_dir, tmp_path, rng):
        pts = rng.uniform(-1.0, 1.0, size=(50, 3))
        pts[0] = 0.0  # next to the central particle
        const = AnalyticField(lambda p: np.tile([0.0, 3.0, 4.0], (p.shape[0], 1)),
                              lambda p: np.zeros((p.shape[0], 3, 3)))
        a = write_field_samples(const, pts, tmp_path / "a.csv")
        b = write_field_samples(ZeroField(), pts, tmp_path / "b.csv")
        other = write_field_samples(ZeroField(), pts[:10], tmp_path / "other.csv")
        return a, b, other

    def test_constant_difference(self, samples, capsys):
        a, b, _ = samples
        assert run_cli(["norms", "--a", str(a), "--b", str(b)]) == EXIT_OK
        lines = dict(line.split() for line in capsys.readouterr().out.strip().splitlines())
        assert int(lines["points"]) == 50
        for key in ("sup", "mean", "rms"):
            assert float(lines[key]) == pytest.approx(5.0)

    def test_region_mask(self, samples, particles, capsys):
        a, b, _ = samples
        assert run_cli(["norms", "--a", str(a), "--b", str(b), "--particles", str(particles),
                        "--delta", "0.2"]) == EXIT_OK
        lines = dict(line.split() for line in capsys.readouterr().out.strip().splitlines())
        assert int(lines["points"]) < 50

    def test_mismatched_points(self, samples):
        a, _, other = samples
        assert run_cli(["norms", "--a", str(a), "--b", str(other)]) == EXIT_USAGE


@pytest.mark.parametrize("argv,code", [
    (["frobnicate"], EXIT_USAGE),
    (["gen"], EXIT_USAGE),
    (["--help"], EXIT_OK),
    (["--threads", "0", "selftest", "kernels"], EXIT_USAGE),
])
def test_usage(log_dir, argv, code):
    assert run_cli(argv) == code


def test_bad_run_config(log_dir, tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[schedule]\nn_values = 27, 8\nphi_values = 0.02, 0.01\n")
    assert run_cli(["run", "--config", str(path), "-o", str(tmp_path / "out")]) == EXIT_USAGE


@pytest.mark.slow
def test_run_small_study(log_dir, tmp_path):
    config = tmp_path / "study.ini"
    config.write_text(
        "[schedule]\nn_values = 27, 64\nphi_values = 0.012, 0.008\n"
        "[quadrature]\nsample_spacing = 0.25\nlp_spacing = 0.25\nlp_radius_factor = 1.25\n"
        "[tolerances]\nreflect_tol = 1e-4\nfixed_point_tol = 1e-8\n"
        "[output]\nrecord_timing = false\nplots = true\n"
    )
    out = tmp_path / "study"
    assert run_cli(["run", "--config", str(config), "-o", str(out)]) == EXIT_OK

    with (out / "report.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [row["N"] for row in rows] == ["27", "64"]
    assert all(float(row["wall_ms"]) == 0.0 for row in rows)
    assert all(np.isfinite(float(row["err_sup_over_phi"])) for row in rows)

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["failures"] == []
    assert set(manifest["entry_seeds"]) == {"27", "64"}
    assert (out / "run_config.ini").read_text() == config.read_text()
    assert len(list((out / "plots").glob("*.svg"))) == 6
    assert (out / "particles_N27.ssl").exists()
    assert (out / "reflections_N64.csv").exists()
    assert any(out.glob("evlab_*.log"))
