"""Exception hierarchy shared by the simulator modules."""


class FedMaeError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(FedMaeError, ValueError):
    """Operands have incompatible lengths or shapes."""


class InvalidArgumentError(FedMaeError, ValueError):
    pass


class DomainError(FedMaeError, ValueError):
    """An element lies outside the domain of an operation (e.g. sqrt of a negative)."""


class NumericError(FedMaeError, ArithmeticError):
    """A non-finite value appeared where only finite values are allowed."""

    def __init__(self, message, round_index=None):
        super().__init__(message)
        self.round_index = round_index


class ProtocolError(FedMaeError):
    """A wire message could not be decoded."""

    def __init__(self, message, node_id=None, round_index=None):
        super().__init__(message)
        self.node_id = node_id
        self.round_index = round_index


class ChecksumError(ProtocolError):
    pass


class TruncatedPayloadError(ProtocolError):
    pass


class VersionMismatchError(ProtocolError):
    pass


class CheckpointError(FedMaeError):
    """Base class for checkpoint read failures."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ConfigError(FedMaeError, ValueError):
    pass


class NotFoundError(FedMaeError, LookupError):
    pass
