"""Exception types raised across the package."""


class LowRankBanditError(Exception):
    """Base class for all errors raised by lrbandits."""


class RankMismatch(LowRankBanditError, ValueError):
    """The numerical rank of a matrix differs from the declared rank."""


class ZeroPropensity(LowRankBanditError, ValueError):
    """A (context, arm) pair has zero sampling probability."""


class DimensionMismatch(LowRankBanditError, ValueError):
    pass


class InvalidSplit(LowRankBanditError, ValueError):
    """The phase-1 sample count is incompatible with the trajectory length."""


class SingularBlock(LowRankBanditError, ArithmeticError):
    pass


class ConfigError(LowRankBanditError, ValueError):
    """Malformed or inconsistent experiment configuration.

    ``key`` and ``line`` locate the offending entry when known.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
