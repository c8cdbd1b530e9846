"""Exception types shared across the package."""


class InputError(ValueError):
    """A caller-supplied value violates an operation's precondition."""


class UnknownIdError(KeyError):
    """An identifier does not resolve to a known record."""


class StateError(RuntimeError):
    """An operation was invoked in a session phase that forbids it."""


class DegenerateEmbeddingError(ArithmeticError):
    """Output normalization was requested for an all-zero vector."""


class IdxFormatError(ValueError):
    """An IDX byte stream has a bad magic number or malformed header."""


class IdxTruncationError(IdxFormatError):
    """An IDX payload is shorter or longer than its header declares."""


class IdxConsistencyError(IdxFormatError):
    """Paired IDX image and label files disagree on record count."""
