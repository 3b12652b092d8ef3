"""Exception hierarchy shared across the package."""


class MLKLError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MLKLError, ValueError):
    pass


class DomainMismatchError(MLKLError, ValueError):
    """Two fields or bases live on different domains."""


class EmptyDomainError(MLKLError, ValueError):
    pass


class RankDeficientError(MLKLError, ValueError):
    """Requested truncation order exceeds the rank of the snapshot ensemble.

    The achievable rank is available as ``rank``.
    """

    def __init__(self, requested, rank):
        self.requested = int(requested)
        self.rank = int(rank)
        super().__init__(
            f"requested M={self.requested} but the centered snapshots only have rank {self.rank}"
        )


class PreconditionError(MLKLError, ValueError):
    pass


class DimensionError(MLKLError, ValueError):
    """Array or domain dimensions do not agree (filter vs stack, table vs basis)."""


class FormatError(MLKLError):
    """Malformed on-disk data. ``offset`` is the byte offset of the problem when known."""

    def __init__(self, message, offset=None, section=None):
        self.offset = offset
        self.section = section
        where = []
        if section is not None:
            where.append(f"section {section!r}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
