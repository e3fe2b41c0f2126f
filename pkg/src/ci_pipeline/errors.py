"""Exception hierarchy shared by all pipeline modules."""


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PipelineError):
    """A configuration value is out of range or inconsistent."""


class FormatError(PipelineError):
    """A file is malformed: bad magic, wrong version, truncation, bad CSV."""


class DataError(PipelineError):
    """Input data violates a precondition (dimensions, duplicates, degeneracy)."""
