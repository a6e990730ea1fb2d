"""
Error Hierarchy
Exceptions raised by ingestion, training, evaluation and the command pipeline.
Each class carries the process exit code used by main.py
"""

from typing import Optional


class NsnmfError(Exception):
    """Base class for all experiment errors"""

    exit_code = 1


class ConfigurationError(NsnmfError):
    """Invalid configuration value, grid or flag combination"""

    exit_code = 2


class DataError(NsnmfError):
    """Problem with a rating file or a dataset derived from it"""

    exit_code = 3


class ParseError(DataError):
    """Malformed record in a rating file"""

    def __init__(self, message: str, line_number: int, path: Optional[str] = None):
        self.line_number = line_number
        self.path = path
        location = f"{path}:{line_number}" if path else f"line {line_number}"
        super().__init__(f"{location}: {message}")


class DuplicateRatingError(DataError):
    """The same (user, item) pair appears more than once"""

    def __init__(self, user_id, item_id, first_line: int, second_line: int):
        self.user_id = user_id
        self.item_id = item_id
        self.first_line = first_line
        self.second_line = second_line
        super().__init__(
            f"duplicate rating for user={user_id!r} item={item_id!r} "
            f"(lines {first_line} and {second_line})"
        )


class EmptyDatasetError(DataError):
    """No ratings left to work with"""


class DivergenceError(NsnmfError):
    """Non-finite gradient or parameter during training"""

    exit_code = 4

    def __init__(self, parameter: str, epoch: Optional[int] = None, step: Optional[int] = None):
        self.parameter = parameter
        self.epoch = epoch
        self.step = step
        super().__init__(self._describe())

    def _describe(self) -> str:
        where = []
        if self.epoch is not None:
            where.append(f"epoch {self.epoch}")
        if self.step is not None:
            where.append(f"step {self.step}")
        suffix = f" ({', '.join(where)})" if where else ""
        return f"non-finite gradient in {self.parameter}{suffix}"

    def with_context(self, epoch: int, step: int) -> 'DivergenceError':
        """Return a copy tagged with the epoch/step at which it happened"""
        return DivergenceError(self.parameter, epoch=epoch, step=step)


class NumericDomainError(NsnmfError, ValueError):
    """Non-finite input to an element-wise function"""

    exit_code = 5


class PredictionIndexError(NsnmfError, IndexError):
    """User or item index outside the model's index space"""

    exit_code = 5


class EvaluationError(NsnmfError):
    """Evaluation input is empty or inconsistent"""

    exit_code = 5
