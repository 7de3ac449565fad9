"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: DataError -> 2, DivergenceError -> 3.
"""


class DataError(Exception):
    """Malformed input data or a violated dataset invariant."""


class DivergenceError(RuntimeError):
    """A numerical procedure produced non-finite values or unbounded iterates."""
