"""Exception hierarchy shared by the library and the CLI.

Every error category carries the exit code the CLI maps it to:
2 for malformed or unusable input, 3 for incompatible configuration,
4 for numeric failures. Anything unexpected keeps the generic code 1.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InputError(PipelineError):
    exit_code = 2


class ConfigError(PipelineError):
    exit_code = 3


class NumericError(PipelineError):
    exit_code = 4


class AllZeroSaliency(InputError):
    """Every saliency entry is zero; the attention input is unusable."""


class EmptyQuestion(InputError):
    """The question has no tokens."""


class DimensionMismatch(InputError):
    """Array shapes are incompatible with the requested operation."""


class ZeroVector(InputError):
    """A feature vector with zero norm where a direction is required."""


class EmptyTokenSet(InputError):
    """An operation needing at least one token received none."""


class EmptyCorpus(InputError):
    """Training requested on an empty corpus."""


class BadMagic(InputError):
    """Tensor file does not start with the expected magic tag."""


class TruncatedPayload(InputError):
    """Tensor payload length disagrees with the declared dimensions."""


class UnknownDtype(InputError):
    """Tensor file declares a dtype code this reader does not know."""


class NonDivisible(ConfigError):
    """Pooling factor does not divide the grid side; profile and grid are incompatible."""


class TooManyClusters(ConfigError):
    """Requested cluster count exceeds the number of tokens."""


class BadGamma(ConfigError):
    """Projector index outside the configured bank."""


class NonFiniteData(NumericError):
    """NaN or infinity encountered where finite values are required."""
