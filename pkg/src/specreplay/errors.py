"""Exception hierarchy shared by every module.

Each class carries the CLI exit code and machine-parsable category it maps to.
"""


class SpecReplayError(Exception):
    category = "error"
    exit_code = 1


class ConfigError(SpecReplayError, ValueError):
    category = "config"
    exit_code = 2


class InputError(SpecReplayError, ValueError):
    category = "input"
    exit_code = 3


class FormatError(InputError):
    category = "format"


class ParseError(InputError):
    category = "parse"


class ShapeError(InputError):
    category = "shape"


class NumericError(SpecReplayError, ArithmeticError):
    category = "numeric"
    exit_code = 4


class GraphStateError(SpecReplayError, RuntimeError):
    category = "graph-state"
