"""Exception hierarchy; each class maps to one CLI exit code."""


class TransDeError(Exception):
    exit_code = 1


class ConfigError(TransDeError, ValueError):
    exit_code = 2


class DataError(TransDeError, ValueError):
    exit_code = 3


class NumericError(TransDeError, ArithmeticError):
    exit_code = 4
