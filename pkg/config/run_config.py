"""
Run Config — Parse and echo the "[section] / key = value" run file.

Every key has a documented default in DEFAULT_CONFIG; unknown sections or keys
are rejected. Values are coerced to the type of their default.
"""

import configparser
import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from config.default_config import DEFAULT_CONFIG
from models.strain import SumPlan
from models.study import Schedule, ScheduleEntry
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(section: str, key: str, raw: str, default: Any) -> Any:
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from e


def parse_floats(text: str) -> List[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def parse_ints(text: str) -> List[int]:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


def optional_float(text: str) -> Optional[float]:
    return float(text) if str(text).strip() else None


@dataclass
class RunConfig:
    """Parsed run file merged over the defaults."""

    values: Dict[str, Dict[str, Any]] = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG))
    text: str = ""
    source: Optional[str] = None

    # ── Parsing ─────────────────────────────────────────────────
    @classmethod
    def from_text(cls, text: str, source: Optional[str] = None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source or "<run config>")
        except configparser.Error as e:
            raise ConfigError(f"Malformed run config: {e}") from e

        values = copy.deepcopy(DEFAULT_CONFIG)
        unknown = [f"[{s}]" for s in parser.sections() if s not in values]
        for section in parser.sections():
            if section not in values:
                continue
            for key, raw in parser.items(section):
                if key not in values[section]:
                    unknown.append(f"[{section}] {key}")
                    continue
                values[section][key] = _coerce(section, key, raw, DEFAULT_CONFIG[section][key])
        if unknown:
            raise ConfigError(f"Unknown run config entries: {', '.join(unknown)}")
        return cls(values, text, source)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"Cannot read run config {path}: {e}") from e
        return cls.from_text(text, str(path))

    @staticmethod
    def render_defaults() -> str:
        """Run-file text listing every key with its default."""
        lines: List[str] = []
        for section, entries in DEFAULT_CONFIG.items():
            lines.append(f"[{section}]")
            for key, value in entries.items():
                rendered = str(value).lower() if isinstance(value, bool) else str(value)
                lines.append(f"{key} = {rendered}")
            lines.append("")
        return "\n".join(lines)

    def echo(self, path: Union[str, Path]) -> Path:
        """Write the parsed text verbatim (the defaults when built without a file)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.text if self.text else self.render_defaults())
        return path

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def override(self, section: str, key: str, value: Any):
        if key not in self.values.get(section, {}):
            raise ConfigError(f"Unknown run config entry [{section}] {key}")
        self.values[section][key] = value

    # ── Derived objects ─────────────────────────────────────────
    def schedule(self) -> Schedule:
        sched = self.values["schedule"]
        try:
            ns = parse_ints(sched["n_values"])
            phis = parse_floats(sched["phi_values"])
        except ValueError as e:
            raise ConfigError(f"[schedule]: {e}") from e
        if not ns:
            raise ConfigError("[schedule] n_values is empty")
        if phis and len(phis) != len(ns):
            raise ConfigError(f"[schedule] {len(ns)} n_values but {len(phis)} phi_values")
        if not phis:
            phis = [sched["phi_scale"] * n ** -0.5 for n in ns]

        entries = []
        for n, phi in zip(ns, phis):
            n_per_axis = None
            if sched["generator"] == "lattice":
                n_per_axis = int(round(n ** (1.0 / 3.0)))
                if n_per_axis ** 3 != n:
                    raise ConfigError(f"Lattice schedule needs cubes, got N={n}")
            elif sched["generator"] != "rsa":
                raise ConfigError(f"Unknown generator '{sched['generator']}'")
            entries.append(ScheduleEntry(n, phi, n_per_axis))
        try:
            return Schedule(entries)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def sum_plan(self, threads: int = 1, chunk_size: int = 512) -> SumPlan:
        s = self.values["summation"]
        try:
            return SumPlan(method=s["method"], theta=optional_float(s["theta"]),
                           expansion_order=s["expansion_order"], tolerance=s["tree_tolerance"],
                           leaf_size=s["leaf_size"],
                           threads=threads, chunk_size=chunk_size)
        except ValueError as e:
            raise ConfigError(f"[summation]: {e}") from e

    def beta_values(self) -> List[float]:
        return parse_floats(self.values["output"]["beta_values"])
