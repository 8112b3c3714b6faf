"""Exception types shared across the package."""


class RankflexError(Exception):
    """Base class for all library-specific errors."""


class ShapeError(RankflexError, ValueError):
    """Operands have incompatible dimensions."""


class ParameterError(RankflexError, ValueError):
    """A numeric or structural argument is outside its allowed range."""


class ParseError(RankflexError, ValueError):
    """A text artifact (CSV, checkpoint) fails to parse."""


class RankFullError(RankflexError, RuntimeError):
    """No orthogonal direction exists: the basis already spans the space."""


class DegenerateInputError(RankflexError, RuntimeError):
    """Orthogonalization retries exhausted on numerically degenerate input."""


class DegenerateSpectrumError(RankflexError, ValueError):
    """All singular values are zero, so the energy distribution is undefined."""


class MinRankError(RankflexError, RuntimeError):
    """Prune requested on an adapter already at rank 1."""


class MaxRankError(RankflexError, RuntimeError):
    """Expansion requested on an adapter already at its rank cap."""


class StalenessError(RankflexError, RuntimeError):
    """Cached or selected state no longer matches the live model."""


class ConfigError(RankflexError, ValueError):
    """Invalid experiment configuration; the message names the field path."""


class TraceError(RankflexError, ValueError):
    """A trace file fails to parse or is internally inconsistent."""


class DivergenceError(RankflexError, RuntimeError):
    """Training loss became non-finite or exploded.

    Carries the partial run as ``result`` so callers can still persist the
    trace with its abort record.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
