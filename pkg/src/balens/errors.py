"""Exception hierarchy; the CLI maps each class to its own exit code."""


class BalensError(Exception):
    exit_code = 1


class ConfigError(BalensError, ValueError):
    exit_code = 2


class DataError(BalensError, ValueError):
    exit_code = 3


class AudioError(DataError):
    pass


class TrainingDivergedError(BalensError, RuntimeError):
    exit_code = 4
