"""Exception types shared across the toolkit."""


class ZestError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ZestError, ValueError):
    """Invalid configuration value (bad epsilon, epochs, etc.)."""


class ShapeError(ZestError, ValueError):
    """Array dimensions do not match what an operation requires."""


class DomainError(ZestError, ValueError):
    """Value outside its legal domain (label out of range, feature outside [0,1])."""


class ComparabilityError(ZestError):
    """Two signatures were built under different perturbation plans."""


class UndefinedDistanceError(ZestError):
    """Cosine distance requested against a zero-norm signature vector."""


class UndefinedCorrelationError(ZestError):
    """Pearson correlation requested on a zero-variance sample."""


class NumericalError(ZestError):
    """A linear solve failed (singular system); usually fixed by ridge > 0."""


class TransportError(ZestError):
    """Network failure talking to a remote oracle.

    ``rows_counted`` carries the number of query rows that were already
    consumed (and billed) before the failure.
    """

    def __init__(self, message, rows_counted=0, points_completed=None):
        super().__init__(message)
        self.rows_counted = rows_counted
        self.points_completed = points_completed


class ProtocolError(ZestError):
    """Remote oracle answered, but violated the wire contract."""


class IntegrityError(ZestError):
    """A persisted file failed its checksum or structural validation."""
