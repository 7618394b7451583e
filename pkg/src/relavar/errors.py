"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class RelavarError(Exception):
    exit_code = 1


class ConfigError(RelavarError, ValueError):
    exit_code = 1


class DataError(RelavarError, ValueError):
    exit_code = 2


class CheckpointError(DataError):
    exit_code = 2


class NumericError(RelavarError, ArithmeticError):
    exit_code = 3
