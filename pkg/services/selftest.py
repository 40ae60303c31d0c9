"""
Self Test — Invariant suites behind ``selftest kernels|fields|reflections|homogenize``.

Each suite returns a list of CheckResult rows; a suite passes when every row
does. Configurations are small so each suite finishes in seconds.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from models.motion import RigidMotion
from models.strain import DipoleSet, SumPlan
from models.study import HomogenizeOptions
from services.density import coarse_density, mollify_density
from services.fields import (
    RigidField, SumField, AnalyticField, background_velocity, explicit_dipole_approx,
    finite_difference_divergence, finite_difference_gradient, finite_difference_laplacian,
    manufactured_force, strain_at_centers,
)
from services.homogenize import solve_bar_u, solve_hat_u, solve_hat_v
from services.particle_generator import default_cube_side, generate_lattice
from services.reflections import reflect_until, rigid_projection
from services.summation import sum_dipoles
from utils.quadrature import lebedev_rule
from utils.stokes_kernels import (
    EIGHT_PI, dipole_field, dipole_leading_term, kernel_difference_decay, oseen, oseen_grad,
    pressure_kernel, rotlet_field, stresslet_contraction, stresslet_dir,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _check(name: str, value: float, bound: float) -> CheckResult:
    return CheckResult(name, bool(np.isfinite(value) and value <= bound), f"{value:.3e} ≤ {bound:.1e}")


def _within(name: str, value: float, target: float, slack: float) -> CheckResult:
    return CheckResult(name, bool(abs(value - target) <= slack), f"{value:+.4f} (target {target:+g} ± {slack:g})")


def _slope(xs: np.ndarray, ys: np.ndarray) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def _random_strain(rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(3, 3))
    s = 0.5 * (a + a.T)
    return s - np.trace(s) / 3.0 * np.eye(3)


# ── Kernels ─────────────────────────────────────────────────────

def kernel_checks(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    e1, e3 = np.eye(3)[0], np.eye(3)[2]

    results.append(_check("oseen(e1) = diag(2,1,1)/8π",
                          float(np.max(np.abs(oseen(e1) - np.diag([2.0, 1.0, 1.0]) / EIGHT_PI))), 1e-15))
    x = rng.normal(size=3)
    lam = rng.uniform(0.1, 10.0)
    results.append(_check("oseen homogeneity −1", float(np.max(np.abs(oseen(lam * x) * lam - oseen(x)))), 1e-13))
    results.append(_check("oseen_grad homogeneity −2",
                          float(np.max(np.abs(oseen_grad(lam * x) * lam ** 2 - oseen_grad(x)))), 1e-13))

    h = 1e-5
    x = rng.normal(size=3)
    x /= np.linalg.norm(x)
    fd = np.stack([(oseen(x + h * np.eye(3)[k]) - oseen(x - h * np.eye(3)[k])) / (2 * h) for k in range(3)], axis=-1)
    results.append(_check("oseen_grad vs finite differences", float(np.max(np.abs(fd - oseen_grad(x)))), 1e-8))
    potential = lambda p: 1.0 / (4.0 * np.pi * np.linalg.norm(p))  # noqa: E731
    fd_p = np.array([-(potential(x + h * np.eye(3)[k]) - potential(x - h * np.eye(3)[k])) / (2 * h)
                     for k in range(3)])
    results.append(_check("pressure kernel = −∇(1/4π|x|)", float(np.max(np.abs(fd_p - pressure_kernel(x)))), 1e-8))
    results.append(_check("pressure(e3) = e3/4π", float(np.max(np.abs(pressure_kernel(e3) - e3 / (4 * np.pi)))),
                          1e-15))

    worst = 0.0
    for _ in range(100):
        eps = _random_strain(rng)
        y = rng.normal(size=3)
        explicit = np.einsum("ki,ijk->j", eps, oseen_grad(y))
        worst = max(worst, float(np.max(np.abs(stresslet_dir(eps, y) - explicit)) / np.max(np.abs(explicit))))
    results.append(_check("stresslet identity (100 random)", worst, 1e-12))
    eps = _random_strain(rng)
    y = rng.normal(size=3)
    results.append(_check("stresslet_contraction = stresslet_dir for trace-free ε",
                          float(np.max(np.abs(stresslet_contraction(eps, y) - stresslet_dir(eps, y)))), 1e-14))

    center, R = np.zeros(3), 0.1
    dirs, weights = lebedev_rule(26)
    surface = center + R * dirs
    results.append(_check("dipole surface value = ε(x−X)",
                          float(np.max(np.abs(dipole_field(center, R, eps, surface) - (R * dirs) @ eps.T))), 1e-12))
    d_surface = dipole_field(center, R, eps, surface * (1.0 + 1e-10))
    results.append(_check("dipole surface mean vanishes", float(np.max(np.abs(weights @ d_surface))), 1e-10))
    results.append(_check("dipole surface torque vanishes",
                          float(np.max(np.abs(weights @ np.cross(R * dirs, d_surface)))), 1e-10))

    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    radii = np.geomspace(4 * R, 100 * R, 12)
    far = radii[:, None] * u
    results.append(_within("dipole leading-term slope",
                           _slope(radii, np.linalg.norm(dipole_leading_term(center, R, eps, far), axis=1)), -2.0, 0.02))
    axial = np.diag([1.0, -0.5, -0.5])
    outer = np.geomspace(10 * R, 100 * R, 12)
    results.append(_within("dipole far-field slope",
                           _slope(outer, np.linalg.norm(dipole_field(center, R, axial, outer[:, None] * e1), axis=1)),
                           -2.0, 0.02))
    remainder = np.linalg.norm(dipole_field(center, R, eps, far) - dipole_leading_term(center, R, eps, far), axis=1)
    results.append(_within("dipole remainder slope", _slope(radii, remainder), -4.0, 0.05))
    omega = rng.normal(size=3)
    v = np.cross(omega, u)
    v /= np.linalg.norm(v)
    results.append(_within("rotlet far-field slope",
                           _slope(radii, np.linalg.norm(rotlet_field(center, R, omega, radii[:, None] * v), axis=1)),
                           -2.0, 0.02))

    exterior = center + (2.0 + rng.uniform(size=(20, 1))) * R * lebedev_rule(26)[0][:20]
    div = finite_difference_divergence(lambda p: dipole_field(center, R, eps, p), exterior, step=1e-5 * 2 * R)
    results.append(_check("exterior dipole divergence-free", float(np.max(np.abs(div))), 1e-6))

    for kind, distance_exponent in (("oseen", -2.0), ("oseen_grad", -3.0)):
        in_offset, in_distance = kernel_difference_decay(kind, seed=seed)
        results.append(_within(f"{kind} difference: offset exponent", in_offset, 1.0, 0.1))
        results.append(_within(f"{kind} difference: distance exponent", in_distance, distance_exponent, 0.1))

    points = rng.uniform(-1.0, 1.0, size=(50, 3)) + 0.5
    single = DipoleSet(center[None], R, eps[None])
    results.append(_check("single dipole sum = dipole_field",
                          float(np.max(np.abs(sum_dipoles(single, points) - dipole_field(center, R, eps, points)))),
                          1e-14))
    return results


# ── Fields ──────────────────────────────────────────────────────

def field_checks(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    f = manufactured_force((0.3, -0.2, 1.0), 0.8)
    pts = rng.uniform(-0.45, 0.45, size=(100, 3))

    lap = finite_difference_laplacian(f.exact_velocity, pts, step=1e-3)
    results.append(_check("−Δv0 = f (relative)", float(np.max(np.abs(-lap - f(pts)))) / f.sup_norm, 1e-3))
    div = np.trace(f.exact_gradient(pts), axis1=1, axis2=2)
    results.append(_check("div v0 = 0", float(np.max(np.abs(div))), 1e-10))
    fd = finite_difference_gradient(f.exact_velocity, pts, step=1e-5)
    results.append(_check("∇v0 vs finite differences", float(np.max(np.abs(fd - f.exact_gradient(pts)))), 1e-5))

    v = background_velocity(f)
    results.append(_check("full background = v0", float(np.max(np.abs(v.value(pts) - f.exact_velocity(pts)))), 1e-10))

    cfg = generate_lattice(3, 0.01, seed=seed)
    motion = RigidMotion(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
    rigid = RigidField(motion)
    results.append(_check("rigid field strains vanish",
                          float(np.max(np.abs(strain_at_centers(rigid, cfg, "surface_avg")))), 1e-12))
    exact = 0.5 * (f.exact_gradient(cfg.centers) + np.swapaxes(f.exact_gradient(cfg.centers), 1, 2))
    results.append(_check("point strains exact on v0",
                          float(np.max(np.abs(strain_at_centers(v, cfg, "point") - exact))), 1e-10))

    widest = generate_lattice(3, 0.04, seed=seed)
    outside = pts[widest.nearest_distance(pts) > 3.0 * widest.radius][:30]
    gaps = []
    for phi in (0.01, 0.02, 0.04):
        lattice = generate_lattice(3, phi, seed=seed)
        punctured = background_velocity(f, lattice, "punctured")
        gaps.append(float(np.max(np.linalg.norm(punctured.value(outside) - v.value(outside), axis=1))))
    ratios = np.array(gaps[1:]) / np.array(gaps[:-1])
    results.append(CheckResult("ball corrections linear in φ", bool(np.all((ratios >= 4.0 / 3.0) & (ratios <= 3.0))),
                               ", ".join(f"{r:.3f}" for r in ratios)))

    strains = strain_at_centers(v, cfg, "point")
    u_tilde = explicit_dipole_approx(v, cfg, strains, SumPlan())
    far = np.array([[3.0, 0.2, -0.4], [0.0, -2.5, 1.0]])
    direct = v.value(far) - sum(dipole_field(c, cfg.radius, e, far) for c, e in zip(cfg.centers, strains))
    results.append(_check("ũ = v − Σ d_i at far points", float(np.max(np.abs(u_tilde.value(far) - direct))), 1e-14))
    results.append(_check("field evaluation is pure",
                          float(np.max(np.abs(u_tilde.value(far) - u_tilde.value(far)))), 0.0))
    return results


# ── Reflections ─────────────────────────────────────────────────

def reflection_checks(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    center, R = rng.normal(size=3), 0.05
    V0, w0 = rng.normal(size=3), rng.normal(size=3)
    eps = _random_strain(rng)

    constant = RigidField(RigidMotion(V0, np.zeros(3), center))
    rotation = RigidField(RigidMotion(np.zeros(3), w0, center))
    straining = AnalyticField(lambda p: (np.asarray(p) - center) @ eps.T,
                              lambda p: np.broadcast_to(eps, (np.asarray(p).shape[0], 3, 3)), label="strain")
    for name, fld, v_exp, w_exp in (("constant", constant, V0, np.zeros(3)),
                                    ("rotation", rotation, np.zeros(3), w0),
                                    ("pure strain", straining, np.zeros(3), np.zeros(3))):
        m = rigid_projection(fld, center, R)
        err = max(float(np.max(np.abs(m.velocity - v_exp))), float(np.max(np.abs(m.omega - w_exp))))
        results.append(_check(f"projection of {name}", err, 1e-12))
    combined = SumField([(1.0, constant), (1.0, rotation)])
    m = rigid_projection(combined, center, R)
    again = rigid_projection(RigidField(m), center, R)
    err = max(float(np.max(np.abs(again.velocity - m.velocity))), float(np.max(np.abs(again.omega - m.omega))))
    results.append(_check("projection idempotent", err, 1e-13))

    f = manufactured_force((0.0, 0.0, 1.0), 0.8)
    cfg = generate_lattice(3, 0.005, seed=seed)
    v = background_velocity(f, cfg, "punctured")
    same, trace = reflect_until(v, cfg, tol=1.0)
    results.append(CheckResult("tol = 1 returns the input", same is v and trace.iterations == 0))
    _, trace = reflect_until(v, cfg, tol=1e-6, k_max=10)
    ratios = trace.ratios
    results.append(CheckResult("reflection residuals contract", bool(ratios) and max(ratios) < 1.0,
                               ", ".join(f"{r:.3f}" for r in ratios)))
    return results


# ── Homogenization ──────────────────────────────────────────────

def homogenize_checks(seed: int = 0) -> List[CheckResult]:
    results = []
    f = manufactured_force((0.0, 0.0, 1.0), 0.8)
    cfg = generate_lattice(3, 0.01, seed=seed)
    s = default_cube_side(cfg.n_particles)
    rho = mollify_density(coarse_density(cfg, s), s)
    pts = np.random.default_rng(seed).uniform(-0.6, 0.6, size=(40, 3))

    zero = HomogenizeOptions(phi=0.0, h=s / 2)
    results.append(_check("φ = 0: v̂ = v0",
                          float(np.max(np.abs(solve_hat_v(f, rho, zero).value(pts) - f.exact_velocity(pts)))), 0.0))

    opts = HomogenizeOptions(phi=cfg.phi, h=s / 2, max_iter=1)
    hat_v = solve_hat_v(f, rho, opts)
    hat_u = solve_hat_u(hat_v, rho, opts)
    one_step, _ = solve_bar_u(f, rho, opts, hat_v=hat_v)
    results.append(_check("first fixed-point iterate = û", float(np.max(np.abs(one_step.value(pts) - hat_u.value(pts)))),
                          0.0))

    converged = HomogenizeOptions(phi=cfg.phi, h=s / 2, fixed_point_tol=1e-10, max_iter=30)
    _, trace = solve_bar_u(f, rho, converged, hat_v=hat_v)
    results.append(CheckResult("ū fixed point converges", trace.converged,
                               f"{trace.iterations} iterations, last {trace.residuals[-1]:.2e}"))
    return results


SUITES: Dict[str, Callable[[int], List[CheckResult]]] = {
    "kernels": kernel_checks,
    "fields": field_checks,
    "reflections": reflection_checks,
    "homogenize": homogenize_checks,
}


def run_suite(name: str, seed: int = 0) -> Tuple[bool, List[CheckResult]]:
    """Run one suite (or "all"); a check that raises counts as failed."""
    names = list(SUITES) if name == "all" else [name]
    results: List[CheckResult] = []
    for suite in names:
        if suite not in SUITES:
            raise ValueError(f"Unknown suite '{suite}'; choose from {', '.join(SUITES)} or all")
        try:
            results.extend(SUITES[suite](seed))
        except Exception as e:
            logger.error(f"Suite {suite} aborted: {e}")
            results.append(CheckResult(f"{suite} suite", False, f"{type(e).__name__}: {e}"))
    return all(r.passed for r in results), results


def format_results(results: List[CheckResult]) -> str:
    width = max((len(r.name) for r in results), default=10)
    return "\n".join(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}" for r in results)
