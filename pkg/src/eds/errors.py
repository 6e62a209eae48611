"""Exception types shared across the package."""


class EdsError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EdsError):
    """An argument or data structure violates a documented precondition."""


class CorpusFormatError(EdsError):
    """A corpus, embedding, score, or label file is malformed."""


class UnknownItemError(EdsError):
    """An item or query id is not known to the corpus or model."""


class VoteError(EdsError):
    """A vote is invalid: unknown expert, unknown pair, or bad label."""


class EvaluationError(EdsError):
    """A metric is undefined for the given inputs."""
