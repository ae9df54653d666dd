"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline-specific failures."""


class ConfigurationError(PipelineError):
    """A configuration value violates its invariants."""


class DataError(PipelineError):
    """Input data is malformed (non-finite values, bad file contents)."""


class ShapeError(PipelineError):
    """An array has the wrong shape for the requested operation."""


class NumericError(PipelineError):
    """A computation produced NaN or Inf."""
