"""Exception types shared across the package.

The CLI maps ConfigurationError to exit code 2 and everything else to 1.
"""


class ConfigurationError(ValueError):
    """A model/run was configured inconsistently (bad key, shape mismatch at
    construction time, incompatible checkpoint)."""


class InputError(ValueError):
    """Runtime input violates a documented precondition (indivisible
    resolution, empty batch, malformed file)."""
