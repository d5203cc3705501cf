"""Exception types shared across the package."""


class HFTError(Exception):
    """Base class for errors raised by hft."""


class DomainError(HFTError, ValueError):
    """A point, parameter or grid lies outside the admissible domain."""


class QuadratureError(HFTError, RuntimeError):
    """A quadrature rule failed to converge to the requested tolerance."""


class JetOrderError(HFTError, ValueError):
    """A jet does not carry enough Taylor coefficients for the requested operation."""


class TruncationError(HFTError, RuntimeError):
    """A spectral expansion cannot meet its tail tolerance.

    ``required_n`` holds the estimated truncation order that would.
    """

    def __init__(self, message: str, required_n: int | None = None):
        super().__init__(message)
        self.required_n = required_n


class MonotonicityError(HFTError, RuntimeError):
    """A sampled transport map failed to be strictly increasing."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        super().__init__(message)
        self.pair = pair


class ConfigError(HFTError, ValueError):
    """An experiment configuration is malformed or inconsistent."""
