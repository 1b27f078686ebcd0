"""Shared exception types."""


class DataError(ValueError):
    """Bad input data: non-finite values, shape mismatches, unparseable CSV rows."""


class NonFiniteLossError(RuntimeError):
    """Loss or gradient became non-finite (parameter blow-up).

    ``exit_index`` is the first offending prediction head, or None when the
    blow-up is not attributable to a single head.
    """

    def __init__(self, message, exit_index=None):
        super().__init__(message)
        self.exit_index = exit_index


class TrainingAbort(RuntimeError):
    """Training stopped mid-run; the message carries stage/iteration context."""
