"""Exception taxonomy shared by all pipeline stages."""


class InsightError(Exception):
    """Base class for every error raised by this package."""


# --- snippet history ---------------------------------------------------------

class GitNotAvailable(InsightError):
    """The git executable could not be invoked."""


class FileNotTracked(InsightError):
    """The requested file is unknown to git at HEAD."""


class RangeOutOfBounds(InsightError):
    """The requested line range exceeds the file length at HEAD."""


class GitFailure(InsightError):
    """git exited nonzero for a reason we do not recognize."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class MalformedLog(InsightError):
    """Structured text (git log output or serialized context) did not match
    the expected format."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnclassifiedInput(InsightError):
    """A hunk reached triviality filtering without being classified."""


# --- github fetch ------------------------------------------------------------

class EmptyBatch(InsightError):
    """A batched query was requested for zero commits."""


class AuthFailure(InsightError):
    """The API rejected our credentials (401/403)."""


class RateLimited(InsightError):
    """Rate limit responses persisted after all configured retries."""


class TransportError(InsightError):
    """The HTTP transport failed below the API layer."""


class SchemaMismatch(InsightError):
    """An API response did not have the shape we expect."""


class MissingLinkage(InsightError):
    """A commit has no corresponding linkage record."""


class CassetteMismatch(InsightError):
    """A replayed request diverged from the recorded cassette."""


# --- context serialization ---------------------------------------------------

class IncompleteRefinement(InsightError):
    """An artifact in the tree has no entry in the refinement mapping."""


# --- summarizer --------------------------------------------------------------

class UnknownUseCase(InsightError):
    """No prompt template is registered for the requested use case."""


class ProviderTimeout(InsightError):
    """The LLM provider did not answer within the configured timeout."""


class ProviderRejection(InsightError):
    """The LLM provider returned a non-success status."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class EmptyCompletion(InsightError):
    """The LLM provider returned an empty completion."""


# --- validator ---------------------------------------------------------------

class UnparsableJudgeOutput(InsightError):
    """Judge output failed the constrained format even after a reprompt."""


class EmptyDataset(InsightError):
    """Judge evaluation was asked to run on an empty dataset."""


# --- frontend ----------------------------------------------------------------

class ConfigError(InsightError):
    """The application configuration is missing or invalid."""


class PipelineError(InsightError):
    """A pipeline stage failed; carries the stage name and original cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
