"""Exception hierarchy shared across the package."""


class DeemError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DeemError, ValueError):
    pass


class DataError(DeemError, ValueError):
    """Problems with input data: names, manifests, counts, shapes."""


class MalformedName(DataError):
    pass


class InvalidCount(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class InvalidN(DeemError, ValueError):
    pass


class ZeroVector(DeemError, ValueError):
    pass


class KTooLarge(DeemError, ValueError):
    pass


class MaxRoundsExceeded(DeemError, RuntimeError):
    pass


class UnlabeledTestSamples(DataError):
    pass


class UnknownDate(DeemError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyEvaluationSet(DataError):
    pass
