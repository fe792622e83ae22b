"""Exception hierarchy shared by all surfmmc modules."""


class SurfMmcError(Exception):
    """Base class for all errors raised by this package."""


class MeshError(SurfMmcError):
    """Invalid mesh data: parse failures, non-manifold edges, degenerate triangles."""


class ChartError(SurfMmcError):
    """Parameterization failure: bad topology, flipped triangles, |mu| >= 1."""


class ConfigError(SurfMmcError):
    """Invalid problem configuration (maps to CLI exit code 2)."""


class NumericalError(SurfMmcError):
    """Linear solve or optimization failure (maps to CLI exit code 3)."""
