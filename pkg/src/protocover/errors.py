"""Exception types raised across the package."""


class ProtocoverError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(ProtocoverError, ValueError):
    pass


class ZeroSalience(ProtocoverError, ValueError):
    """Salience matrix carries no mass, so no mean pitch exists."""


class EmptyInput(ProtocoverError, ValueError):
    pass


class DegenerateBatch(ProtocoverError, ValueError):
    """Batch cannot produce any triplet (too few classes or pairs)."""


class DegenerateCatalog(ProtocoverError, ValueError):
    """Catalog lacks enough eligible classes to draw a batch."""


class DivergedTraining(ProtocoverError, RuntimeError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss or parameters at step {step}")


class DuplicateTrack(ProtocoverError, ValueError):
    pass


class MissingSelfReference(ProtocoverError, KeyError):
    pass


class UndefinedMetric(ProtocoverError, ValueError):
    pass


class TooShort(ProtocoverError, ValueError):
    pass


class EmptyStore(ProtocoverError, ValueError):
    pass


class FormatError(ProtocoverError, ValueError):
    """Binary file has a wrong magic or a truncated payload."""


class CatalogParseError(ProtocoverError, ValueError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")
