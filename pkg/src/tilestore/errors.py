class TileStoreError(Exception):
    """Base class for data-level failures (bad input, unknown objects)."""


class InvalidLayoutError(TileStoreError):
    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class OutOfBoundsError(TileStoreError):
    pass


class UnknownVideoError(TileStoreError):
    pass


class ConcurrentRetileError(TileStoreError):
    pass


class CalibrationError(TileStoreError):
    pass


class SceneError(TileStoreError):
    pass


class CorruptDataError(TileStoreError):
    pass
