"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit an
``error_code=...`` line without string matching on messages.
"""

from __future__ import annotations


class AsatError(Exception):
    code = "ASAT_ERROR"


# -- ingest ------------------------------------------------------------------

class IngestError(AsatError):
    code = "INGEST_ERROR"


class MissingColumn(IngestError):
    code = "MISSING_COLUMN"

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing column {name!r}")


class MalformedTimestamp(IngestError):
    code = "MALFORMED_TIMESTAMP"

    def __init__(self, row: int, raw: str = ""):
        self.row = row
        self.raw = raw
        super().__init__(f"row {row}: malformed or off-grid timestamp {raw!r}")


class NonNumericValue(IngestError):
    code = "NON_NUMERIC_VALUE"

    def __init__(self, row: int, column: str, raw: str = ""):
        self.row = row
        self.column = column
        self.raw = raw
        super().__init__(f"row {row}: column {column!r} is not a finite number ({raw!r})")


class DuplicateTimestamp(IngestError):
    code = "DUPLICATE_TIMESTAMP"

    def __init__(self, ts):
        self.ts = ts
        super().__init__(f"duplicate timestamp {ts.isoformat(timespec='minutes')}")


class GapTooLarge(IngestError):
    code = "GAP_TOO_LARGE"

    def __init__(self, day, slot: int, length: int):
        self.day = day
        self.slot = slot
        self.length = length
        super().__init__(f"day {day.isoformat()} slot {slot}: gap of {length} slot(s) cannot be filled")


class EmptyInput(IngestError):
    code = "EMPTY_INPUT"

    def __init__(self, msg: str = "no observations"):
        super().__init__(msg)


# -- windowing ---------------------------------------------------------------

class WindowingError(AsatError):
    code = "WINDOWING_ERROR"


class MissingDay(WindowingError):
    code = "MISSING_DAY"

    def __init__(self, day):
        self.day = day
        super().__init__(f"operational day {day.isoformat()} is not in the series")


class SlotOutOfRange(WindowingError):
    code = "SLOT_OUT_OF_RANGE"

    def __init__(self, slot: int, n_slots: int):
        self.slot = slot
        self.n_slots = n_slots
        super().__init__(f"slot {slot} outside 0..{n_slots - 1}")


class InsufficientHistory(WindowingError):
    code = "INSUFFICIENT_HISTORY"

    def __init__(self, needed: int, have: int):
        self.needed = needed
        self.have = have
        super().__init__(f"need {needed} operational days, have {have}")


class EmptySet(WindowingError):
    code = "EMPTY_SET"

    def __init__(self):
        super().__init__("training set is empty")


# -- regression --------------------------------------------------------------

class RegressionError(AsatError):
    code = "REGRESSION_ERROR"


class NotEnoughRows(RegressionError):
    code = "NOT_ENOUGH_ROWS"

    def __init__(self, have: int, needed: int = 2):
        self.have = have
        self.needed = needed
        super().__init__(f"need at least {needed} rows, have {have}")


class SingularSystem(RegressionError):
    code = "SINGULAR_SYSTEM"


class LabelMismatch(AsatError):
    code = "LABEL_MISMATCH"


# -- attribution -------------------------------------------------------------

class AttributionError(AsatError):
    code = "ATTRIBUTION_ERROR"


class EmptyBackground(AttributionError):
    code = "EMPTY_BACKGROUND"

    def __init__(self):
        super().__init__("background set has no rows")


class TooManyFeatures(AttributionError):
    code = "TOO_MANY_FEATURES"

    def __init__(self, n_features: int, max_features: int):
        self.n_features = n_features
        self.max_features = max_features
        super().__init__(f"exact enumeration over {n_features} features exceeds cap {max_features}")


# -- report ------------------------------------------------------------------

class ReportError(AsatError):
    code = "REPORT_ERROR"


class EfficiencyViolation(ReportError):
    code = "EFFICIENCY_VIOLATION"

    def __init__(self, residual: float, tol: float):
        self.residual = residual
        self.tol = tol
        super().__init__(f"attribution does not close: residual {residual:.3e} > tol {tol:.3e}")


class LengthMismatch(ReportError):
    code = "LENGTH_MISMATCH"


class UnsupportedFormat(ReportError):
    code = "UNSUPPORTED_FORMAT"

    def __init__(self, fmt: str, artifact: str = ""):
        self.fmt = fmt
        super().__init__(f"format {fmt!r} not supported{' for ' + artifact if artifact else ''}")


class ConfigError(AsatError):
    code = "CONFIG_ERROR"
