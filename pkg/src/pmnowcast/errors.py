"""Exception hierarchy shared across the pipeline."""


class PMNowcastError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(PMNowcastError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(PMNowcastError):
    """Problem with archive contents."""


class ArchiveIOError(DataError, OSError):
    """File or directory could not be read."""


class SchemaError(DataError, KeyError):
    """A required variable or coordinate is missing from a file."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DataQualityError(DataError, ValueError):
    """Non-finite values inside the extraction window."""


class NoDataError(DataError, ValueError):
    """No usable frames in the requested range."""


class UnitError(DataError, ValueError):
    """Unrecognised or mismatched physical units."""


class GridError(DataError, ValueError):
    pass


class AlignmentError(GridError):
    """Bounds are not on the 0.4 degree global grid."""


class BoundsError(GridError):
    """Window does not fit inside the global grid."""


class InvalidStatsError(PMNowcastError, ValueError):
    pass


class ShapeError(PMNowcastError, ValueError):
    pass


class NumericError(PMNowcastError, ValueError):
    pass


class CheckpointError(PMNowcastError):
    """Unreadable, corrupted or incompatible checkpoint."""


class TrainingError(PMNowcastError, RuntimeError):
    pass
