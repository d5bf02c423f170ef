"""Exception hierarchy shared by the library and the command line

Every error carries the exit code the CLI reports for it:
    2  configuration / invalid argument
    3  missing input
    4  format or compatibility error
    5  numerical failure
"""

from typing import Optional


class ShapePriorError(Exception):
    """Base class for all Shape Prior errors"""

    exit_code = 1


class InvalidInputError(ShapePriorError, ValueError):
    """Invalid argument or input value"""

    exit_code = 2


class InvalidShapeError(InvalidInputError):
    """Tensor or grid extents do not satisfy an operation's contract"""


class ConfigError(InvalidInputError):
    """Configuration file or flags failed validation"""


class MissingInputError(ShapePriorError, FileNotFoundError):
    """A required input path does not exist"""

    exit_code = 3


class DatasetFormatError(ShapePriorError):
    """A stored dataset, tensor or checkpoint file could not be parsed"""

    exit_code = 4


class VersionMismatchError(DatasetFormatError):
    """File was written by an unsupported format version"""


class TruncatedPayloadError(DatasetFormatError):
    """Payload is shorter than its header announces"""


class ChecksumError(DatasetFormatError):
    """Payload checksum does not match the header"""


class MissingFileError(DatasetFormatError):
    """A manifest references a file that does not exist"""


class CompatibilityError(DatasetFormatError):
    """Checkpoint and dataset disagree on classes or extents"""


class NumericalFailureError(ShapePriorError, ArithmeticError):
    """Non-finite values where finite ones are required"""

    exit_code = 5


class TrainingFailureError(NumericalFailureError):
    """Training diverged"""

    def __init__(self, message: str, epoch: int, arm: Optional[str] = None):
        self.epoch = epoch
        self.arm = arm
        prefix = f"[{arm}] " if arm else ""
        super().__init__(f"{prefix}{message} (epoch {epoch})")
