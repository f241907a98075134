"""Exception hierarchy shared by all sinkprune modules."""


class SinkPruneError(Exception):
    """Base class; ``code`` is the machine-parsable name used by the CLI."""

    @property
    def code(self) -> str:
        return type(self).__name__


# numerics
class NotPositiveDefinite(SinkPruneError):
    pass


class DimensionMismatch(SinkPruneError):
    pass


# model
class InvalidConfig(SinkPruneError):
    pass


class TokenOutOfRange(SinkPruneError):
    pass


class SequenceTooLong(SinkPruneError):
    pass


class WrongMode(SinkPruneError):
    pass


class InvalidSteps(SinkPruneError):
    pass


# sinkstats
class NotRowStochastic(SinkPruneError):
    pass


class ShapeMismatch(SinkPruneError):
    pass


class DegenerateSequence(SinkPruneError):
    pass


class EmptyTimestepSet(SinkPruneError):
    pass


class MixedSequenceLengths(SinkPruneError):
    pass


# calib
class VocabTooSmall(SinkPruneError):
    pass


class CorpusTooShort(SinkPruneError):
    pass


class ProfileLengthMismatch(SinkPruneError):
    pass


# prune
class InvalidPattern(SinkPruneError):
    pass


class MissingSinkProfile(SinkPruneError):
    pass


class AllHeadsPruned(SinkPruneError):
    pass


# io
class BadMagic(SinkPruneError):
    pass


class UnsupportedVersion(SinkPruneError):
    pass


class TruncatedFile(SinkPruneError):
    pass


class ManifestOverlap(SinkPruneError):
    pass


class IoFailure(SinkPruneError):
    pass


class NonFiniteValue(IoFailure):
    pass


# cli
class ConfigConflict(SinkPruneError):
    pass
