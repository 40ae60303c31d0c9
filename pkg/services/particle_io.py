"""
Particle I/O — SSL1 configuration files.

Layout: line 1 ``SSL1``; line 2 ``N R L seed``; then N lines ``x y z``.
Floats are written with 17 significant digits so a round trip is exact.
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np

from models.particles import ParticleConfig
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

MAGIC = "SSL1"


def write_config(cfg: ParticleConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [MAGIC, f"{cfg.n_particles} {cfg.radius:.17g} {cfg.box_scale:.17g} {int(cfg.seed)}"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in cfg.centers]
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote {cfg.n_particles} particles to {path}")
    return path


def read_config(path: Union[str, Path]) -> ParticleConfig:
    path = Path(path)
    lines = [line.strip() for line in path.read_text().splitlines() if line.strip()]
    if not lines or lines[0] != MAGIC:
        raise ConfigError(f"{path}: missing '{MAGIC}' header")
    try:
        n_str, r_str, l_str, seed_str = lines[1].split()
        n = int(n_str)
        centers = np.array([[float(v) for v in line.split()] for line in lines[2:2 + n]]).reshape(-1, 3)
    except (IndexError, ValueError) as e:
        raise ConfigError(f"{path}: malformed particle file ({e})") from e
    if centers.shape[0] != n:
        raise ConfigError(f"{path}: header announces {n} particles, found {centers.shape[0]}")
    return ParticleConfig(centers, float(r_str), float(l_str), int(seed_str))
