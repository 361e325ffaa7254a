"""Exception types shared across the package."""


class UnmixError(Exception):
    """Base class for all package errors."""


class ShapeError(UnmixError):
    """An operation received operands with incompatible shapes."""


class ConditioningError(UnmixError):
    """A linear-algebra step found the data too ill-conditioned to proceed."""


class DegenerateGeometryError(UnmixError):
    """Simplex identification hit near-parallel hyperplanes."""


class CubeFormatError(UnmixError):
    """A cube container on disk is malformed or inconsistent."""
