"""Exception types shared across the package."""


class QNNFaultError(Exception):
    """Base class for all errors raised by qnnfault."""


class StructuralError(QNNFaultError, ValueError):
    """A network, tensor or result object is malformed."""


class UsageError(QNNFaultError, ValueError):
    """A caller passed arguments that violate an operation's preconditions."""


class LoadError(QNNFaultError):
    """A file on disk is missing, truncated, corrupted or inconsistent."""


class CheckpointMismatch(QNNFaultError):
    """A checkpoint was written for a different campaign plan."""
