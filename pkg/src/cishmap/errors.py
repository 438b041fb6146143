"""Exception types raised across the package."""


class CishError(Exception):
    """Base class for all package errors."""


class ShapeError(CishError, ValueError):
    """Array extents are inconsistent with an operation."""


class NumericFault(CishError, FloatingPointError):
    """A NaN or infinity appeared in activations or the loss."""


class ModelFormatError(CishError, ValueError):
    """A model file is corrupt, truncated, or from another format version."""


class NoTissueError(CishError, RuntimeError):
    """The mask pipeline found no tissue."""


class DegenerateClusterError(CishError, ArithmeticError):
    """A fuzzy cluster lost all of its membership mass."""


class ConfigError(CishError, ValueError):
    """Unknown or invalid configuration key."""
