"""Exception hierarchy shared across the package.

The CLI maps ConfigError (and subclasses) to exit code 2 and CorpusError
to exit code 3; everything else is an ordinary crash.
"""


class RpmLabError(Exception):
    """Base class for all rpmlab errors."""


class ConfigError(RpmLabError):
    """Invalid configuration: bad shapes, widths, flags, hyperparameters."""


class FingerprintMismatch(ConfigError):
    """Weights were produced by a different architecture than the target."""


class CorpusError(RpmLabError):
    """A problem corpus is missing, corrupt, or incompatible with the run."""


class RuleRangeError(RpmLabError):
    """A rule application left the attribute's value range; resample."""


class NoAnswerError(RpmLabError):
    """No candidate in the pool satisfies the annotated rules."""


class AmbiguousAnswerError(RpmLabError):
    """More than one candidate satisfies the annotated rules."""


class GenerationExhausted(RpmLabError):
    """Bounded resampling failed to instantiate a problem under the config."""
