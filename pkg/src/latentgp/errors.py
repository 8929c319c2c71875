"""Exception hierarchy shared across the package."""


class LatentGPError(Exception):
    """Base class for all domain errors raised by latentgp."""


# -- language -------------------------------------------------------------

class GptlError(LatentGPError):
    pass


class GptlSyntaxError(GptlError):
    """Input is outside the GPTL grammar."""


class GptlTypeError(GptlError, TypeError):
    """Expression is syntactically valid but ill-typed."""


class DepthError(GptlError):
    """Expression exceeds the configured maximum depth."""


# -- market data ----------------------------------------------------------

class MarketError(LatentGPError):
    pass


class FormatError(MarketError):
    pass


class OrderingError(MarketError):
    pass


class OhlcViolation(MarketError):
    pass


class UnknownIndicator(MarketError):
    pass


class BadPeriod(MarketError):
    pass


class TooShort(LatentGPError):
    pass


class TestDataAccess(LatentGPError):
    """A test window was touched outside the final-evaluation path."""

    __test__ = False


# -- backtest / behaviour -------------------------------------------------

class NoBars(LatentGPError):
    pass


class UndefinedIndicatorAt(LatentGPError):
    def __init__(self, t):
        super().__init__(f"indicator undefined at bar {t}")
        self.t = t


class LengthMismatch(LatentGPError, ValueError):
    pass


class NegativeDistance(LatentGPError, ValueError):
    pass


# -- models ---------------------------------------------------------------

class TooLong(LatentGPError):
    pass


class FilterStarvation(LatentGPError):
    pass


class DivergenceDetected(LatentGPError):
    pass


class CheckpointMismatch(LatentGPError):
    pass


class ModelMissing(LatentGPError):
    pass


class DimMismatch(LatentGPError, ValueError):
    pass


class EmptyDataset(LatentGPError):
    pass


class InitializationFailed(LatentGPError):
    """No decodable, trading individual was found for the initial population."""


# -- cli ------------------------------------------------------------------

class MissingArtifact(LatentGPError):
    pass


class ConfigInvalid(LatentGPError):
    pass
