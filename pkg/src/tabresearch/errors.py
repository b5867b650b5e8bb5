"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class TabResearchError(Exception):
    """Base class for all engine errors."""


# ingestion ---------------------------------------------------------------


class IngestError(TabResearchError):
    pass


class MalformedDocument(IngestError):
    pass


class OverlappingSpans(IngestError):
    pass


class OutOfBounds(IngestError, IndexError):
    pass


class EmptyDocument(IngestError):
    pass


class UnreadableEncoding(IngestError):
    pass


# structure ---------------------------------------------------------------


class NoDataRegion(TabResearchError):
    pass


# operators / planning ----------------------------------------------------


class EmptySelection(TabResearchError):
    pass


class CyclicConstraints(TabResearchError):
    pass


class NoValidOrder(TabResearchError):
    pass


class EmptyCandidates(TabResearchError):
    pass


class RewardOutOfRange(TabResearchError, ValueError):
    pass


# execution ---------------------------------------------------------------


class OperatorError(TabResearchError):
    """Raised by a single operator application; halts the running path."""


class UnknownDescriptor(OperatorError, KeyError):
    def __init__(self, descriptor: str, available=()):
        self.descriptor = descriptor
        self.available = tuple(available)
        super().__init__(descriptor)

    def __str__(self) -> str:
        msg = f"{self.descriptor} not found"
        if self.available:
            msg += "; available: " + " | ".join(self.available)
        return msg


class TypeMismatch(OperatorError, TypeError):
    pass


class EmptyAggregate(OperatorError):
    pass


class DuplicatePivotKey(OperatorError):
    pass


class TerminalState(OperatorError):
    pass


# agent -------------------------------------------------------------------


class AgentError(TabResearchError):
    pass


class BudgetExhausted(AgentError):
    pass


class AgentProtocolError(AgentError):
    pass


class TransportError(AgentError):
    pass


# simulation --------------------------------------------------------------


class InvalidRewardSpec(TabResearchError, ValueError):
    pass
