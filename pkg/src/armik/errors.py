"""Exception types shared across the package.

Invalid arguments raise the built-in ``ValueError``; the classes below cover
failure modes that deserve their own category at the CLI boundary.
"""


class SaturationError(RuntimeError):
    """Rejection sampling exceeded its consecutive-rejection budget."""


class NumericalError(RuntimeError):
    """A non-finite value appeared where finite numbers are required."""


class IntegrityError(RuntimeError):
    """A recorded content digest does not match the file on disk."""
