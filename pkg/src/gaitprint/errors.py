"""Exception taxonomy. CLI exit codes: ConfigError -> 1, DataError -> 2, NumericError -> 3."""


class GaitprintError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(GaitprintError):
    """Invalid configuration value or combination."""


class DataError(GaitprintError):
    """Input data violates an operation's contract."""


class ParseError(DataError):
    """Malformed input row; carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class OrderingError(DataError):
    """Timestamps or indices are not in the required order."""


class EmptyInputError(DataError):
    """An operation that requires data received none."""


class ShapeError(DataError):
    """A sequence or array has the wrong length or shape."""


class DuplicateKeyError(DataError):
    """A key that must be unique appeared more than once."""


class EligibilityError(DataError):
    """Participant does not qualify for the requested paradigm."""


class CompletenessError(DataError):
    """A required (subject, candidate) score pair is missing."""


class DegenerateLabelError(DataError):
    """A binary fit was requested with only one class present."""


class FoldError(DataError):
    """A cross-validation fold lost all members of one class."""


class NumericError(GaitprintError):
    """Non-finite values or a failed numeric routine."""


class StageError(GaitprintError):
    """Error with pipeline stage context attached."""

    def __init__(self, stage, cause, participant_id=None):
        self.stage = stage
        self.cause = cause
        self.participant_id = participant_id
        where = f"stage={stage}"
        if participant_id is not None:
            where += f" participant={participant_id}"
        super().__init__(f"{where}: {cause}")
