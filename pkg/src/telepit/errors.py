"""Exception hierarchy. CLI exit codes are attached to each class."""


class TelepitError(Exception):
    exit_code = 1


class ConfigError(TelepitError, ValueError):
    exit_code = 1


class DataError(TelepitError, ValueError):
    exit_code = 2


class FormatError(DataError):
    """Malformed TPIT field file or TPCK checkpoint."""


class CheckpointError(DataError):
    pass


class NumericalError(TelepitError, ArithmeticError):
    exit_code = 3


class DegenerateMetricError(TelepitError, ValueError):
    """A metric is undefined for the given inputs (zero anomaly, flat spectrum...)."""

    exit_code = 2


class GradCheckError(TelepitError):
    exit_code = 4
