"""Exception hierarchy shared by every subpackage."""


class DDNetError(Exception):
    pass


class DimensionError(DDNetError, ValueError):
    """Incompatible tensor or image shapes."""


class NumericError(DDNetError, ArithmeticError):
    """NaN or Inf produced during a forward or backward pass."""


class ContractError(DDNetError, RuntimeError):
    """An operation was called outside its documented preconditions."""


class DataError(DDNetError, ValueError):
    """Malformed input data: masks, files, datasets."""


class ConfigError(DDNetError, ValueError):
    pass
