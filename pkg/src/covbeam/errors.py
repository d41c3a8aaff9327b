"""Exception types shared across the package."""


class UsageError(ValueError):
    """Caller violated an operation's contract (bad arguments, wrong order)."""


class InferenceError(RuntimeError):
    """Numerical failure inside an inference pass, e.g. a non-finite weight."""
