"""Exception hierarchy. The CLI maps each family onto an exit code."""


class DyGSSMError(Exception):
    exit_code = 1


class ConfigError(DyGSSMError, ValueError):
    exit_code = 2


class InputError(DyGSSMError, ValueError):
    """Bad or malformed data (edge files, node ids, caches)."""

    exit_code = 3


class ConsistencyError(DyGSSMError):
    """Internal state disagrees with itself (cache gaps, shape drift)."""

    exit_code = 3


class ShapeError(DyGSSMError, ValueError):
    exit_code = 4


class ContractError(DyGSSMError, ValueError):
    exit_code = 4


class NumericError(DyGSSMError, ArithmeticError):
    exit_code = 4
