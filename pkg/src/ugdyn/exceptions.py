"""Exception hierarchy shared by every ugdyn module."""


class UgdynError(Exception):
    """Base class for all errors raised by ugdyn."""


class InvalidInputError(UgdynError, ValueError):
    """An argument violates a documented precondition."""


class CapacityError(UgdynError):
    """A configured enumeration or memory bound would be exceeded."""

    def __init__(self, message, bound):
        super().__init__(f"{message} (bound={bound})")
        self.bound = bound


class ParseError(UgdynError, ValueError):
    """A file could not be parsed. Carries the offending 1-based line number."""

    def __init__(self, message, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.path = path


class NumericalError(UgdynError, ArithmeticError):
    """Base class for integration failures."""


class StiffnessError(NumericalError):
    """Step size underflowed before reaching the requested end time."""

    def __init__(self, t, max_log_a):
        super().__init__(
            f"step size underflow at t={t:.6g} (max a_m = exp({max_log_a:.4g}))"
        )
        self.t = t
        self.max_log_a = max_log_a


class NumericalOverflowError(NumericalError, OverflowError):
    """The state became non-finite during integration."""

    def __init__(self, t):
        super().__init__(
            f"non-finite state at t={t:.6g}; auxiliary weights are already "
            "integrated as log(a), so reduce max_step or tighten tolerances"
        )
        self.t = t
