"""Exception types shared across the package."""


class InvalidParameter(ValueError):
    """A parameter violates a documented precondition."""


class NumericalFailure(RuntimeError):
    """A linear solve or time step produced a non-finite result."""


class UndefinedFit(ValueError):
    """A decay-rate fit was requested on data that cannot be log-fitted."""
