"""Exception hierarchy shared across the engine."""


class LongviewError(Exception):
    """Base class for all engine errors."""


class ParseError(LongviewError):
    """A file or reply could not be parsed; carries location context."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(LongviewError):
    """An invariant on loaded data failed; the message names the invariant."""


class DimensionMismatch(ValidationError):
    """Embedding vectors of unequal length were compared."""


class DuplicateDocId(ValidationError):
    """Two documents with the same id were offered to an index builder."""


class ConfigError(LongviewError):
    """Invalid generator or pipeline configuration."""


class EmptyCorpus(LongviewError):
    """Search was attempted over a corpus with no indexed content."""


class EmptyGraph(LongviewError):
    """Cell selection was attempted over a graph with no observations."""


class GatewayError(LongviewError):
    """Base class for model-channel failures."""

    def __init__(self, message: str, backend_id: str = ""):
        self.backend_id = backend_id
        super().__init__(message)


class Timeout(GatewayError):
    """A model call exceeded its deadline."""


class HttpError(GatewayError):
    """A model endpoint returned a non-success status or was unreachable."""


class SchemaViolation(GatewayError):
    """A model reply failed validation against its expected schema."""


class UnknownQuestion(LongviewError):
    """Ledger report requested for a question id with no recorded calls."""


class NotFound(LongviewError):
    """A referenced node, segment, or file does not exist."""


class CorruptSegment(LongviewError):
    """A persisted graph segment failed its checksum."""


class IdMismatch(LongviewError):
    """Answer ids and question ids do not align in evaluation."""


class InsufficientEvents(LongviewError):
    """The ground-truth script has too few happenings for a question mix."""
