"""Exception hierarchy."""


class RobustformError(Exception):
    """Base class for all package errors."""


class ConfigError(RobustformError, ValueError):
    """Invalid tree, ambiguity, product or run configuration."""


class InfeasiblePolytopeError(RobustformError, ValueError):
    """The martingale polytope at a node is empty."""


class EnumerationLimitError(RobustformError):
    """A brute-force enumeration would exceed its cardinality bound."""


class DecompositionError(RobustformError):
    """Optional decomposition left a positive residual (ambiguity set not saturated)."""


class NoSublinearityError(RobustformError):
    """No strictly sublinear pair of claims could be found."""


class NumericalAssertionError(RobustformError):
    """A required numerical identity or inequality failed."""
