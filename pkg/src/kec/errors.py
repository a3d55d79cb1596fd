"""Exception hierarchy shared across the toolkit."""


class KecError(Exception):
    """Base class for all toolkit errors."""


class TensorIOError(KecError):
    """Base class for embedding-file format errors."""


class BadMagicError(TensorIOError):
    pass


class TruncatedPayloadError(TensorIOError):
    pass


class HeaderOverflowError(TensorIOError):
    pass


class NonFiniteValueError(TensorIOError):
    pass


class InvariantError(KecError):
    """A domain-type invariant was violated."""


class DimensionMismatchError(KecError):
    pass


class LLMError(KecError):
    """Base class for LLM client failures."""


class LLMRequestError(LLMError):
    """Non-retryable HTTP failure (4xx)."""

    def __init__(self, message, status_code=None):
        super().__init__(message)
        self.status_code = status_code


class LLMRetryExhaustedError(LLMError):
    """Retryable failures (5xx / timeout) exhausted the retry budget."""


class LLMParseError(LLMError):
    """Structured fields could not be extracted from a completion."""


class BatchCompletionError(LLMError):
    """One or more requests in a batch failed; successes are preserved."""

    def __init__(self, failures, responses):
        self.failures = failures  # index -> exception
        self.responses = responses  # index -> CompletionResponse
        indices = ", ".join(str(i) for i in sorted(failures))
        super().__init__(f"batch requests failed at indices: {indices}")


class MissingEmbeddingError(KecError):
    """Sidecar lookup had no vector for a requested string."""

    def __init__(self, text):
        super().__init__(f"no sidecar embedding for string: {text!r}")
        self.text = text


class StageError(KecError):
    """Pipeline stage failure with stage attribution."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class MissingPrerequisiteError(StageError):
    """A stage was run before the stage that produces its inputs."""

    def __init__(self, stage, required_stage, missing_path):
        super().__init__(
            stage,
            f"missing artifact {missing_path}; run stage '{required_stage}' first",
        )
        self.required_stage = required_stage
        self.missing_path = missing_path
