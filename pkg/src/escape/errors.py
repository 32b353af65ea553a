"""Exception hierarchy shared by all solver modules."""


class EscapeError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 3


# model validation / configuration
class ConfigError(EscapeError):
    exit_code = 1


class NonPositiveRate(ConfigError):
    pass


class MassNotOne(ConfigError):
    pass


class UnstableRationalTransform(ConfigError):
    pass


class SchemaError(ConfigError, ValueError):
    pass


class RangeError(ConfigError, ValueError):
    pass


# routing
class RoutingError(EscapeError):
    exit_code = 2


class RoutingMismatch(RoutingError):
    pass


class UnsupportedSeverity(RoutingError):
    pass


class ConditionViolated(RoutingError):
    pass


# numerics
class NumericsError(EscapeError):
    exit_code = 3


class DegenerateLeadingCoefficient(NumericsError):
    pass


class MultipleRootsDetected(NumericsError):
    pass


class ConfluentRootsUnsupported(NumericsError):
    pass


class NonFinite(NumericsError):
    pass


class NotContractive(NumericsError):
    pass


class QuadratureUnderResolved(NumericsError):
    pass


class IterationCapExceeded(NumericsError):
    pass


class TailUnderflow(NumericsError):
    pass


class SingularThetaAtB(NumericsError):
    pass


# monte carlo
class NonTermination(EscapeError):
    exit_code = 4
