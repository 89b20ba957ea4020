"""Exception types shared across the package."""


class UplLabError(Exception):
    """Base class for all package errors."""


class InvalidInputError(UplLabError, ValueError):
    pass


class ConfigurationError(UplLabError, ValueError):
    pass


class ParseError(UplLabError):
    def __init__(self, message: str, record: int):
        super().__init__(f"record {record}: {message}")
        self.record = record


class EmptyPathSetError(UplLabError):
    """No monotonic lattice path survives (log-likelihood is -inf)."""


class DegenerateAlignmentError(EmptyPathSetError):
    def __init__(self, message: str, token_index: int):
        super().__init__(message)
        self.token_index = token_index


class InstanceTooLargeError(UplLabError):
    pass


class TrainingError(UplLabError):
    def __init__(self, message: str, epoch: int | None = None, utterance_id: int | None = None):
        super().__init__(f"{message} (epoch={epoch}, utterance_id={utterance_id})")
        self.epoch = epoch
        self.utterance_id = utterance_id


class DecodeError(UplLabError):
    def __init__(self, message: str, chunk_index: int):
        super().__init__(f"chunk {chunk_index}: {message}")
        self.chunk_index = chunk_index
