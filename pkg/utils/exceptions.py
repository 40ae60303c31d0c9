"""
Exceptions — Error hierarchy shared by every module of the viscosity lab.

Geometry, kernel, quadrature and solver failures each get a named type so the
study pipeline can record which stage failed without parsing messages.
"""


class EvlabError(Exception):
    """Base class for all lab errors."""


# ── Geometry ────────────────────────────────────────────────────
class OverlapError(EvlabError):
    """Particles would overlap (d_min ≤ 2R)."""


class DomainError(EvlabError):
    """Particles do not fit inside the container ball B_{L−R}(0)."""


class SaturationError(EvlabError):
    """Random sequential adsorption cannot place the requested particles."""


class GridError(EvlabError):
    """Invalid grid or mollifier parameters."""


# ── Kernels / fields ────────────────────────────────────────────
class SingularPointError(EvlabError):
    """A kernel was evaluated at (or numerically at) its singularity."""


class StrainError(EvlabError):
    """A strain is not symmetric and trace-free within tolerance."""


class AccuracyError(EvlabError):
    """Tree summation failed its self-check against direct summation."""


class QuadratureError(EvlabError):
    """Quadrature produced non-finite values or missed its error target."""


# ── Iterations ──────────────────────────────────────────────────
class ContractivityError(EvlabError):
    """Reflection residuals grew instead of contracting."""


class NonConvergence(EvlabError):
    """Reflections hit the iteration cap outside the contraction regime."""


class NonContractive(EvlabError):
    """Homogenized fixed point stopped contracting."""


# ── Metrics / configuration ─────────────────────────────────────
class EmptyRegionError(EvlabError):
    """No sample points survived the region mask."""


class DegenerateFitError(EvlabError):
    """Scaling fit with identical abscissae."""


class ConfigError(EvlabError):
    """Malformed or unknown run configuration entries."""
