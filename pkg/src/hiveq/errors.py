"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid configuration or mismatched dimensions, detected up front."""


class ContractViolation(RuntimeError):
    """A caller broke an interface precondition (e.g. an illegal action)."""


class IntegrityError(RuntimeError):
    """A persisted artifact failed validation (corrupt or wrong version)."""


class ProtocolError(RuntimeError):
    """A malformed or out-of-order message on the container link."""
