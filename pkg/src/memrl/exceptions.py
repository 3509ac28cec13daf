"""Exception hierarchy shared across memrl modules."""


class MemrlError(Exception):
    """Base class for every error raised by this package."""


# memory core
class ValidationError(MemrlError):
    """A memory operation decision violates an invariant."""

    def __init__(self, message, invariant=None):
        super().__init__(message)
        self.invariant = invariant


class MissingField(ValidationError):
    pass


class UnknownTarget(ValidationError):
    pass


class ForbiddenField(ValidationError):
    pass


class ParseError(MemrlError):
    """Manager output is not well-formed. ``offset`` is a byte offset."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(ParseError):
    pass


class CorruptBank(MemrlError):
    pass


# retrieval
class DimensionMismatch(MemrlError, ValueError):
    pass


# policy
class ImpossibleAction(MemrlError):
    pass


# rl
class GroupTooSmall(MemrlError, ValueError):
    pass


class MissingLogProb(MemrlError):
    pass


class NonFiniteGradient(MemrlError, FloatingPointError):
    pass


# metrics
class JudgeUnavailable(MemrlError):
    pass


class JudgeMalformed(MemrlError):
    pass


class EmptyInput(MemrlError, ValueError):
    pass


# dataset
class FormatError(MemrlError):
    def __init__(self, message, path="", offset=None):
        where = path if offset is None else f"{path}@{offset}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.offset = offset


class TooFewDialogues(MemrlError, ValueError):
    pass


class ExtractorUnavailable(MemrlError):
    pass


# gateway
class GatewayError(MemrlError):
    pass


class Timeout(GatewayError):
    pass


class AuthFailure(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class StubMiss(GatewayError):
    pass


# cli
class ConfigError(MemrlError, ValueError):
    pass


class UsageError(MemrlError):
    """Unknown subcommand or flag."""
