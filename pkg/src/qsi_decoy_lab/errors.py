"""Exception hierarchy shared by every module."""


class QSIError(Exception):
    """Base class for all library errors."""


class DomainError(QSIError, ValueError):
    """An input lies outside the domain of the operation."""


class HeraldingImpossibleError(QSIError):
    """The heralding probability is zero, so no post-selected state exists."""


class BracketError(QSIError, ValueError):
    """A root/extremum bracket does not contain a sign change or feasible point."""


class UndefinedErrorRate(QSIError, ZeroDivisionError):
    """Error rate requested for a photon number whose yield is zero."""


class NoSignalError(QSIError):
    """Overall gain is zero; QBER is undefined."""


class DegenerateIntensitiesError(QSIError, ValueError):
    """Signal and decoy intensities do not allow decoy-state estimation."""


class InfeasibleError(QSIError):
    """No positive key rate (or no consistent solution) exists."""


class InsufficientDataError(QSIError, ValueError):
    """Too few feasible points to compute a statistic."""


class ConfigError(QSIError, ValueError):
    """Invalid run configuration."""
