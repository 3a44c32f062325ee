"""Exception hierarchy shared by all modules."""


class DbforgeError(Exception):
    pass


class LabelOutOfRange(DbforgeError, ValueError):
    pass


class EmptyInput(DbforgeError, ValueError):
    pass


class NotADistribution(DbforgeError, ValueError):
    pass


class DegenerateWeights(DbforgeError, ValueError):
    pass


class ConfigInvalid(DbforgeError, ValueError):
    def __init__(self, reason, key=None):
        self.key = key
        super().__init__(reason if key is None else f"{key}: {reason}")


class FormatError(DbforgeError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class DimMismatch(DbforgeError, ValueError):
    pass


class DivergenceDetected(DbforgeError, RuntimeError):
    def __init__(self, step, loss):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step}")


class AllZeroWeights(DbforgeError, ValueError):
    pass


class NoShortcuts(DbforgeError, ValueError):
    pass


class MissingCell(DbforgeError, ValueError):
    pass


class StageError(DbforgeError, RuntimeError):
    """Wraps a failure with the pipeline stage it came from."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
