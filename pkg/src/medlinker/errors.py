"""Exception hierarchy shared by all medlinker modules."""


class MedlinkerError(Exception):
    """Base class for data errors raised by this package."""


class MalformedCode(MedlinkerError, ValueError):
    pass


class MalformedRecord(MedlinkerError, ValueError):
    """A bad line in an input file. ``line`` is 1-based, or None if unknown."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyCatalog(MedlinkerError, ValueError):
    pass


class EmptyMention(MedlinkerError, ValueError):
    pass


class EmptyRelevantSet(MedlinkerError, ValueError):
    pass


class LengthMismatch(MedlinkerError, ValueError):
    pass


class VersionMismatch(MedlinkerError):
    pass


class CorruptIndex(MedlinkerError):
    pass
