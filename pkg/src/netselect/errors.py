"""Exception hierarchy shared across the package."""


class NetselectError(Exception):
    """Base class for all package errors."""


class UsageError(NetselectError):
    pass


class InvalidConfig(NetselectError, ValueError):
    pass


# trace_model
class MissingColumn(NetselectError, ValueError):
    pass


class TimestampNotMonotone(NetselectError, ValueError):
    pass


class NetworkLengthMismatch(NetselectError, ValueError):
    pass


class IoFailure(NetselectError, OSError):
    pass


class TraceTooShort(NetselectError, ValueError):
    pass


# preprocess
class InsufficientData(NetselectError, ValueError):
    pass


class AllMissingFeature(NetselectError, ValueError):
    pass


class NoEligibleNeighbor(NetselectError, ValueError):
    pass


class WrongTask(NetselectError, ValueError):
    pass


class NoPositives(NetselectError, ValueError):
    pass


# neural_core
class ShapeMismatch(NetselectError, ValueError):
    pass


class InvalidLabel(NetselectError, ValueError):
    pass


class NonFiniteGradient(NetselectError, FloatingPointError):
    pass


class EmptyList(NetselectError, ValueError):
    pass


# predictors
class EmptyCorpus(NetselectError, ValueError):
    pass


class DivergedTraining(NetselectError, FloatingPointError):
    pass


class MissingFeature(NetselectError, KeyError):
    pass


# selection
class EmptyForecastList(NetselectError, ValueError):
    pass


class IndivisibleSplit(NetselectError, ValueError):
    pass


class UnknownPacketId(NetselectError, ValueError):
    pass


# simulation
class ModelFeatureMismatch(NetselectError, ValueError):
    pass


# metrics_report
class LengthMismatch(NetselectError, ValueError):
    pass


class SingleClass(NetselectError, ValueError):
    pass


class NoValidPairs(NetselectError, ValueError):
    pass


class EmptySeries(NetselectError, ValueError):
    pass


class UnpairedOutcomes(NetselectError, ValueError):
    pass
