"""Exception hierarchy shared by every module of the package."""


class EMAError(Exception):
    """Base class for all errors raised by ``ema_fl``."""


class EmptyRound(EMAError):
    """No client update survived validation for a round."""


class DimensionMismatch(EMAError):
    """A gradient or dataset has the wrong dimension.

    ``offenders`` lists the client ids (or indices) that failed the check.
    """

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = tuple(offenders)


class DuplicateClient(EMAError):
    """Two updates in one round share a client id."""


class NonFiniteValue(EMAError, ValueError):
    """NaN or infinity found where only finite reals are admitted."""


class SampleTooSmall(EMAError, ValueError):
    """Sample has fewer points than the statistic requires."""


class AllFiltered(EMAError):
    """Outlier thresholds rejected every value of the sample."""


class TrimTooAggressive(EMAError, ValueError):
    """Count-based trimming would leave nothing to average."""


class TooFewClients(EMAError, ValueError):
    """Not enough clients for the requested rule or statistic."""


class OracleFailure(EMAError):
    """A validation loss oracle returned a non-finite value."""


class ConstantSample(EMAError, ValueError):
    """Zero-variance sample; normality tests are undefined."""


class SampleSizeOutOfRange(EMAError, ValueError):
    """Sample size outside the supported range of a test."""


class EmptyDataset(EMAError, ValueError):
    """A client dataset holds no samples."""


class TooFewSamples(EMAError, ValueError):
    """Dataset cannot be split so that every client gets a sample."""


class ConfigError(EMAError, ValueError):
    """Malformed or inconsistent configuration."""
