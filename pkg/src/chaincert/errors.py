"""Exception hierarchy.

Every error raised on bad input derives from :class:`ChainCertError` so a
caller (and the command line front end) can catch one type. Failed margin
inequalities are never exceptions; they come back as verdict objects.
"""


class ChainCertError(Exception):
    """Base class for all toolkit errors."""


class InputError(ChainCertError, ValueError):
    """Malformed numeric input (non-finite entries, empty matrices, bad shapes)."""


class DimensionError(InputError):
    """Two operands cannot be composed with the requested dimensions."""


class WindowError(InputError):
    """A rank window or truncation rank lies outside the admissible range."""


class FitDomainError(InputError):
    """Power-law fitting requested on a spectrum with nonpositive values."""


class StructureError(InputError):
    """Row groups, support sizes or column bins are inconsistent."""


class OracleLimitError(ChainCertError):
    """An exhaustive oracle was asked to enumerate an instance that is too large."""


class InfeasibleSpecError(InputError):
    """A synthetic generator received targets that cannot be realised together."""


class ContainerError(InputError):
    """A matrix container file is malformed; carries the path and byte offset."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path}: offset {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class ManifestError(InputError):
    """A manifest, configuration or partition file is missing entries or disagrees with the chain."""
