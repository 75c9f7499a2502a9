"""
Error hierarchy for the paralinguistics toolkit.

Every failure the pipeline can report is a subclass of ParalingError, which
itself is a ValueError so callers that only catch ValueError keep working.
Each class carries the process exit code the CLI returns for it:

- 1: data errors (bad audio, labels, features, predictions)
- 2: configuration errors
- 3: numeric failures during training
"""

from typing import Optional


class ParalingError(ValueError):
    """Base class for all toolkit errors"""

    exit_code: int = 1


# ============================================================================
# DATA ERRORS (exit code 1)
# ============================================================================

class DataError(ParalingError):
    exit_code = 1


class NotFound(DataError, FileNotFoundError):
    """Input file does not exist"""


class UnsupportedFormat(DataError):
    """Audio container is readable but outside the PCM16 mono contract"""

    def __init__(self, path: str, field: str):
        self.path = path
        self.field = field
        super().__init__(f"Unsupported audio format in {path}: {field}")

    def __reduce__(self):
        return (self.__class__, (self.path, self.field))


class CorruptHeader(DataError):
    """Container header could not be parsed or declares no data"""


class FormatError(DataError):
    """Binary feature/checkpoint file has bad magic, version or length"""


class SchemaMismatch(DataError):
    """Label CSV is missing a column the schema names"""


class ReservedId(DataError):
    """Source id contains the segment separator `@`"""


class UnknownClassName(DataError):
    """Label value not present in the class-name map"""


class DuplicateId(DataError):
    """Same source id appears twice in one table"""


class EmptyClip(DataError):
    pass


class EmptySeries(DataError):
    pass


class ClipTooShort(DataError):
    """Clip shorter than one analysis frame"""


class SampleRateMismatch(DataError):
    pass


class KOutOfRange(DataError):
    pass


class EmptyLabels(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class MissingClass(DataError):
    """A class in [0, n_classes) has no examples to upsample from"""


class UnreachableClass(DataError):
    """Target distribution gives mass to a class without examples"""


class NoExamples(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class MissingCache(DataError):
    """backward() called without a training-mode forward cache"""


class ConstantInput(DataError):
    """Correlation undefined because one input has zero variance"""


class LengthMismatch(DataError):
    pass


class EmptyClassRow(DataError):
    """Confusion matrix row with no counts; recall undefined"""


class IdMismatch(DataError):
    pass


class NonPositiveWeights(DataError):
    pass


class MissingPrediction(DataError):
    pass


# ============================================================================
# CONFIGURATION ERRORS (exit code 2)
# ============================================================================

class ConfigError(ParalingError):
    exit_code = 2


class CutoffOutOfRange(ConfigError):
    pass


class TooManyFilters(ConfigError):
    """Adjacent Mel centers closer than one FFT bin"""


# ============================================================================
# NUMERIC FAILURES (exit code 3)
# ============================================================================

class NumericError(ParalingError):
    exit_code = 3


class NonFiniteLoss(NumericError):
    """Training loss became NaN or infinite"""

    def __init__(self, epoch: int, batch: int, member: Optional[int] = None):
        self.epoch = epoch
        self.batch = batch
        self.member = member
        where = f"epoch {epoch}, batch {batch}"
        if member is not None:
            where = f"model {member}, {where}"
        super().__init__(f"Non-finite loss at {where}")

    def __reduce__(self):
        return (self.__class__, (self.epoch, self.batch, self.member))


class MemberFailure(ParalingError):
    """Ensemble member training failed; wraps the original error"""

    def __init__(self, member: int, cause: Exception):
        self.member = member
        self.cause = cause
        self.exit_code = map_exception_to_exit_code(cause)
        super().__init__(f"Ensemble model {member} failed: {cause}")

    def __reduce__(self):
        return (self.__class__, (self.member, self.cause))


def map_exception_to_exit_code(exc: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(exc, ParalingError):
        return exc.exit_code
    return 1
