"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """A model parameter is outside its valid domain."""


class DegenerateGeometryError(ValueError):
    """Anchor geometry does not determine a 2-D position (singular H^T H)."""


class NumericError(ArithmeticError):
    """A matrix that must be PSD/invertible is not, within tolerance."""


class SynthesisError(RuntimeError):
    """Controller synthesis (Riccati iteration) did not converge."""


class EstimationError(RuntimeError):
    """An iterative position estimator diverged."""


class ConfigError(ValueError):
    """Configuration file could not be parsed or violates an invariant."""
