"""Exception types shared across the package."""


class DomainError(ValueError):
    """A numeric precondition was violated (bad depth, shape mismatch, ...)."""


class FormatError(ValueError):
    """An input document is malformed.

    ``field`` names the offending key path, e.g. ``"cameras[1].rotation"``.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
