"""Exceptions shared across the toolkit, grouped by CLI exit code."""


class ConfigError(Exception):
    """Bad config file or config value (exit code 2)."""


class DataFormatError(Exception):
    """Malformed feature file, manifest or ground-truth file (exit code 2)."""


class TrainingDiverged(Exception):
    """Non-finite loss or gradient encountered (exit code 3)."""


class DegenerateVector(Exception):
    """A vector with (near-)zero norm cannot be projected to the unit sphere."""
