"""Exception types shared across the package.

The CLI maps these onto exit codes: config errors exit 2, numerical
failures exit 3, protocol violations exit 4.
"""


class ConfigError(ValueError):
    """Invalid or malformed experiment configuration."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-convergence, loss of definiteness)."""


class ProtocolError(RuntimeError):
    """An interaction protocol was violated (e.g. act/observe out of order)."""
