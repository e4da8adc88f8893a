"""Exception taxonomy shared across the package."""


class CoresegError(Exception):
    """Base class; carries a short category used by the CLI error line."""

    category = "error"


class ShapeError(CoresegError):
    """Array dimensions disagree with what an operation requires."""

    category = "shape"


class ConfigError(CoresegError):
    """Parameters are internally inconsistent (e.g. non-exact conv output size)."""

    category = "config"


class FormatError(CoresegError):
    """A binary file is corrupt, truncated, or of an unsupported version."""

    category = "format"


class ValidationError(CoresegError):
    """Structurally well-formed input that fails a semantic check."""

    category = "validation"
