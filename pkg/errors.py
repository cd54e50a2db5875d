from typing import Any, Dict, Optional


class PolForgeError(Exception):
    """Base error for every failure raised by polforge."""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, **self.context}


class ConfigurationError(PolForgeError, ValueError):
    """Invalid configuration, parameter or precondition."""


class ShapeError(PolForgeError, ValueError):
    """Dimension or architecture mismatch."""


class DataReferenceError(PolForgeError, IndexError):
    """A dataset row id outside the bound dataset."""


class FormatError(PolForgeError):
    """Malformed proof bytes."""

    def __init__(self, message: str, offset: Optional[int] = None, **context: Any):
        super().__init__(message, offset=offset, **context)
        self.offset = offset


class ProofStructureError(PolForgeError):
    """Proof records or checkpoints do not satisfy the proof invariants."""


class CommitmentViolation(PolForgeError):
    """Data served for a step does not hash to the committed digest."""

    def __init__(self, message: str, step: int, **context: Any):
        super().__init__(message, step=step, **context)
        self.step = step


class AvailabilityError(PolForgeError):
    """The data provider cannot serve the rows a step references."""

    def __init__(self, message: str, step: Optional[int] = None, **context: Any):
        super().__init__(message, step=step, **context)
        self.step = step


class LedgerError(PolForgeError):
    """Commitment ledger append rejected."""


class AttackConstructionError(PolForgeError):
    """An attack could not satisfy its construction postcondition."""


class DomainError(PolForgeError, ValueError):
    """Argument outside the domain of a closed-form bound."""


class DegenerateSampleError(PolForgeError, ValueError):
    """Sample or ledger too degenerate for the requested statistic."""
