"""Exception hierarchy shared across the engine."""


class IotForgeError(Exception):
    """Base class for all engine errors."""


class InvalidInputError(IotForgeError):
    """An argument violated a documented precondition."""


class BudgetExceededError(IotForgeError):
    """A provider call, step, or token budget was exhausted."""


class ProviderError(IotForgeError):
    """The language-model provider failed (transport or protocol)."""


class FixtureExhaustedError(ProviderError):
    """A scripted provider had no fixture entry matching the latest message."""


class MalformedOutputError(ProviderError):
    """Provider output could not be parsed after the configured retries."""


class IngestionError(IotForgeError):
    """A knowledge source could not be fetched or ingested."""


class PlatformKnowledgeError(IotForgeError):
    """Platform documentation is missing; generation cannot proceed without it."""


class DimensionMismatchError(IotForgeError):
    """Query vector dimension does not match the index dimension."""


class StoreNotBuiltError(IotForgeError):
    """A knowledge tool was used before its store was built."""


class SandboxError(IotForgeError):
    """The sandbox runner could not be launched."""


class TransportError(IotForgeError):
    """A device adapter failed to reach the device."""


class FeedbackProtocolError(IotForgeError):
    """Feedback was submitted while no probe was outstanding."""
