class InvalidInput(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class ArchitectureMismatch(InvalidInput):
    """Raised when two models or a model and data disagree on shape."""


class NumericalError(ArithmeticError):
    """Raised when training produces non-finite values."""

    def __init__(self, msg, participant_id=None):
        super().__init__(msg)
        self.participant_id = participant_id


class StageError(RuntimeError):
    """Wraps a failure inside one stage of a federated round."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
