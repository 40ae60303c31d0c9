"""
Command-line surface of the viscosity lab.

    evlab gen -n 64 --phi 0.02 -o particles.ssl
    evlab validate --particles particles.ssl
    evlab selftest kernels
    evlab run --config study.ini -o runs/study
    evlab norms --a u.csv --b ubar.csv

Exit codes: 0 success, 1 assumption or self-test failure (or a failed study
entry), 2 usage or configuration error.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from config.run_config import RunConfig
from config.settings import Settings
from models.particles import RegionPredicate
from services.fields import read_field_samples
from services.particle_generator import default_delta, generate_lattice, generate_rsa, validate_assumptions
from services.particle_io import read_config, write_config
from services.selftest import SUITES, format_results, run_suite
from services.study_orchestrator import StudyOrchestrator
from utils.exceptions import ConfigError, EvlabError
from utils.logging_config import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evlab", description="Effective viscosity of dilute sphere suspensions")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (overrides EVLAB_THREADS)")
    parser.add_argument("--log-level", default=None, choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    parser.add_argument("--seed", type=int, default=None, help="root seed override")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="write a particle configuration (or a run-config template)")
    gen.add_argument("-n", "--n-particles", type=int, default=64)
    gen.add_argument("--phi", type=float, default=None, help="volume fraction (default 0.16·N^-1/2)")
    gen.add_argument("--generator", choices=("lattice", "rsa"), default="lattice")
    gen.add_argument("--jitter", type=float, default=0.1)
    gen.add_argument("--gap-factor", type=float, default=2.0)
    gen.add_argument("--box-scale", type=float, default=1.0)
    gen.add_argument("--template", action="store_true", help="write the default run config instead")
    gen.add_argument("-o", "--output", required=True)

    validate = sub.add_parser("validate", help="print the assumption report of a configuration")
    validate.add_argument("--particles", required=True)
    validate.add_argument("--c-sep", type=float, default=4.0)
    validate.add_argument("--eps", type=float, default=0.5)

    selftest = sub.add_parser("selftest", help="run invariant suites")
    selftest.add_argument("suite", choices=sorted(SUITES) + ["all"])

    run = sub.add_parser("run", help="full convergence study")
    run.add_argument("--config", default=None, help="run file (defaults used when omitted)")
    run.add_argument("-o", "--output", default=None, help="output directory (default EVLAB_OUTPUT_DIR)")

    norms = sub.add_parser("norms", help="compare two field sample files")
    norms.add_argument("--a", required=True)
    norms.add_argument("--b", required=True)
    norms.add_argument("--particles", default=None, help="restrict to Ω_δ of this configuration")
    norms.add_argument("--delta", type=float, default=None)
    return parser


# ── Subcommands ─────────────────────────────────────────────────

def cmd_gen(args, settings: Settings) -> int:
    if args.template:
        RunConfig().echo(args.output)
        print(f"Run config template written to {args.output}")
        return EXIT_OK
    n = args.n_particles
    phi = args.phi if args.phi is not None else 0.16 * n ** -0.5
    seed = args.seed if args.seed is not None else 0
    if args.generator == "lattice":
        per_axis = int(round(n ** (1.0 / 3.0)))
        if per_axis ** 3 != n:
            raise ConfigError(f"Lattice generation needs a cube number of particles, got {n}")
        cfg = generate_lattice(per_axis, phi, args.box_scale, args.jitter, seed=seed)
    else:
        cfg = generate_rsa(n, phi, args.box_scale, args.gap_factor, seed=seed)
    write_config(cfg, args.output)
    print(f"{cfg.n_particles} particles, R = {cfg.radius:.6g}, d_min = {cfg.d_min:.6g} -> {args.output}")
    return EXIT_OK


def cmd_validate(args, settings: Settings) -> int:
    cfg = read_config(args.particles)
    report = validate_assumptions(cfg, args.c_sep, args.eps)
    print("\n".join(report.as_lines()))
    return EXIT_OK if report.all_passed else EXIT_FAILED


def cmd_selftest(args, settings: Settings) -> int:
    passed, results = run_suite(args.suite, seed=args.seed or 0)
    print(format_results(results))
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return EXIT_OK if passed else EXIT_FAILED


def cmd_run(args, settings: Settings) -> int:
    run_config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        run_config.override("schedule", "seed", args.seed)
    output_dir = Path(args.output or settings.OUTPUT_DIR)
    orchestrator = StudyOrchestrator(run_config, settings)
    report = orchestrator.run(output_dir)
    print(f"Report written to {output_dir / 'report.csv'} ({len(report.rows)} entries, "
          f"{len(report.failures)} failed)")
    return EXIT_FAILED if report.failures else EXIT_OK


def cmd_norms(args, settings: Settings) -> int:
    pts_a, a = read_field_samples(args.a)
    pts_b, b = read_field_samples(args.b)
    if pts_a.shape != pts_b.shape or not np.array_equal(pts_a, pts_b):
        raise ConfigError("Sample files must list the same points in the same order")
    keep = np.ones(pts_a.shape[0], dtype=bool)
    if args.particles:
        cfg = read_config(args.particles)
        region = RegionPredicate(cfg, args.delta if args.delta is not None else default_delta(cfg.n_particles))
        keep = region.contains(pts_a)
    if not np.any(keep):
        raise ConfigError("No sample points left after masking")
    diff = np.linalg.norm(a[keep] - b[keep], axis=1)
    print(f"points  {int(np.sum(keep))}")
    print(f"sup     {float(np.max(diff)):.10g}")
    print(f"mean    {float(np.mean(diff)):.10g}")
    print(f"rms     {float(np.sqrt(np.mean(diff ** 2))):.10g}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "validate": cmd_validate,
    "selftest": cmd_selftest,
    "run": cmd_run,
    "norms": cmd_norms,
}


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help and 2 on usage errors
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        settings = Settings()
        overrides = {}
        if args.threads is not None:
            overrides["THREADS"] = args.threads
        if args.log_level is not None:
            overrides["LOG_LEVEL"] = args.log_level
        settings = dataclasses.replace(settings, **overrides)
    except ValueError as e:
        print(f"evlab: {e}", file=sys.stderr)
        return EXIT_USAGE

    log_dir = args.output if args.command == "run" and args.output else settings.LOG_DIR
    setup_logging(settings.LOG_LEVEL, log_dir=log_dir)

    try:
        return COMMANDS[args.command](args, settings)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"evlab: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (EvlabError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"evlab {args.command}: {e}", file=sys.stderr)
        return EXIT_FAILED
