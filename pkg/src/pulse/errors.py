"""Error taxonomy shared across the package.

Every failure the toolkit can produce on purpose falls into one of three
buckets, and the CLI maps them onto distinct exit codes:

* configuration problems (bad values, impossible combinations, missing
  files named in a config) -> exit code 2
* numeric failures during training (NaN/inf loss) -> exit code 3
* anything else is a plain bug and escapes as-is -> exit code 1
"""


class PulseError(Exception):
    """Base class for all deliberate errors raised by this package."""


class ConfigurationError(PulseError):
    """A config value, combination of values, or referenced path is invalid."""


class DataFormatError(PulseError):
    """An input file does not match its declared on-disk format.

    The message includes the byte offset (for binary formats) or the
    line/column (for text formats) where decoding failed.
    """


class NumericFailure(PulseError):
    """Training produced a non-finite loss; the iteration was aborted.

    Carries enough context (iteration, epoch, member) to locate the blow-up.
    """

    def __init__(self, message, *, iteration=None, epoch=None, member=None):
        super().__init__(message)
        self.iteration = iteration
        self.epoch = epoch
        self.member = member


class SnapshotShapeError(PulseError):
    """A parameter snapshot does not fit the network it is restored into."""
