"""Exception types shared across the package."""


class SdfitError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SdfitError):
    """Invalid configuration value; the message names the offending field."""


class ParseError(SdfitError):
    """Malformed input file; the message carries the line number."""


class EvaluationError(SdfitError):
    """Non-finite parameter or input encountered during field evaluation."""


class GraphError(SdfitError):
    """A loss graph references parameters of a different network."""


class ProjectionError(SdfitError):
    """Pulling a query failed because the field gradient vanished."""


class DegenerateBatchError(SdfitError):
    """Every query in a batch was skipped (vanishing gradients)."""


class TrainingError(SdfitError):
    """Optimization aborted; the message carries the failing step index."""
