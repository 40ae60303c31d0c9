"""
Runtime settings for the viscosity lab.
Loaded from environment variables (and a local .env file) with defaults for desk runs.
"""

import os
from dataclasses import dataclass, field

from dotenv import load_dotenv

load_dotenv()

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass
class Settings:
    """Runtime configuration loaded from environment variables."""

    # ── Logging ─────────────────────────────────────────────────
    LOG_LEVEL: str = field(default_factory=lambda: os.getenv("LOG_LEVEL", "INFO").upper())
    LOG_DIR: str = field(default_factory=lambda: os.getenv("LOG_DIR", "logs"))

    # ── Execution ───────────────────────────────────────────────
    THREADS: int = field(default_factory=lambda: int(os.getenv("EVLAB_THREADS", "1")))
    CHUNK_SIZE: int = field(default_factory=lambda: int(os.getenv("EVLAB_CHUNK_SIZE", "512")))

    # ── Output ──────────────────────────────────────────────────
    OUTPUT_DIR: str = field(default_factory=lambda: os.getenv("EVLAB_OUTPUT_DIR", "runs"))

    def __post_init__(self):
        """Validate configuration after initialization."""
        if self.LOG_LEVEL not in _LOG_LEVELS:
            raise ValueError(f"LOG_LEVEL must be one of {', '.join(_LOG_LEVELS)}, got {self.LOG_LEVEL}")
        if self.THREADS < 1:
            raise ValueError(f"EVLAB_THREADS must be positive, got {self.THREADS}")
        if self.CHUNK_SIZE < 1:
            raise ValueError(f"EVLAB_CHUNK_SIZE must be positive, got {self.CHUNK_SIZE}")
