"""Exception and warning types raised across the toolkit."""


class AdscreenError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AdscreenError):
    pass


class DataError(AdscreenError):
    pass


class SchemaError(ConfigError):
    pass


class SchemaMismatch(DataError):
    pass


class ParseError(DataError):
    def __init__(self, row, col, value, reason=""):
        self.row = row
        self.col = col
        self.value = value
        msg = f"row {row}, column {col!r}: cannot parse {value!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class DuplicateKey(DataError):
    pass


class NameCollision(DataError):
    pass


class UnknownColumn(DataError):
    pass


class TargetProtected(DataError):
    pass


class UnknownLevel(DataError):
    pass


class DegenerateClass(DataError):
    pass


class EmptyNode(DataError):
    pass


class MissingAtPredict(DataError):
    pass


class EmptyGrid(ConfigError):
    pass


class EmptyConfig(ConfigError):
    pass


class AllMissingColumn(DataError):
    pass


class NoEvalCells(DataError):
    pass


class TooFewMinority(DataError):
    pass


class TooFewRows(DataError):
    pass


class BadComponentCount(ConfigError):
    pass


class ShapeError(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class MissingStage(AdscreenError):
    pass


class StageFailure(AdscreenError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


class InvalidChronology(UserWarning):
    """Exam date precedes birth date; the derived age cell is masked."""

    def __init__(self, rows):
        self.rows = list(rows)
        super().__init__(f"exam date before birth date in rows {self.rows}")
