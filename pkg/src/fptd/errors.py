"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class InvalidParameter(ValueError):
    """A model parameter is out of range."""

    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"invalid parameter {field!r}: {reason}")


class NotApplicable(ValueError):
    """The jump law violates the exponential-moment hypothesis."""


class DegenerateGrid(ValueError):
    pass


class UnsupportedJumpKind(ValueError):
    pass


class NotSpectrallyNegative(ValueError):
    pass
