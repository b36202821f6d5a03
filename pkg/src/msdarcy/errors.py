"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid configuration: bad grid ratios, malformed specs, missing files."""


class RasterFormatError(ConfigError):
    """Malformed or non-positive permeability raster record."""


class SolveError(RuntimeError):
    """A linear solve failed or did not reach the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
