"""Exception types shared across the toolkit.

Every error carries a stable ``code`` string so callers (and the CLI) can
branch on the failure class without parsing messages.
"""
from __future__ import annotations


class CorefDREError(Exception):
    code = "ERROR"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details


class ParseError(CorefDREError):
    code = "PARSE_ERROR"


class SchemaError(CorefDREError):
    code = "SCHEMA_ERROR"


class ValidationError(CorefDREError):
    code = "VALIDATION_ERROR"

    def __init__(self, message: str, report):
        super().__init__(message, report=report)
        self.report = report


class AmbiguousHeadError(CorefDREError):
    code = "AMBIGUOUS_HEAD"

    def __init__(self, message: str, chain_indices):
        super().__init__(message, chain_indices=tuple(chain_indices))
        self.chain_indices = tuple(chain_indices)


class UnknownKindError(CorefDREError):
    code = "UNKNOWN_KIND"


class OrderViolation(CorefDREError):
    code = "ORDER_VIOLATION"


class NoGoldChains(CorefDREError):
    code = "NO_GOLD_CHAINS"


class NonFiniteLoss(CorefDREError):
    code = "NONFINITE_LOSS"


class EmptyDialogue(CorefDREError):
    code = "EMPTY_DIALOGUE"


class EmptySplit(CorefDREError):
    code = "EMPTY_SPLIT"


class MissingState(CorefDREError):
    code = "MISSING_STATE"


class MissingPrediction(CorefDREError):
    code = "MISSING_PREDICTION"

    def __init__(self, message: str, missing):
        super().__init__(message, missing=list(missing))
        self.missing = list(missing)


class CheckpointMismatch(CorefDREError):
    code = "CHECKPOINT_MISMATCH"


class ConfigError(CorefDREError):
    code = "CONFIG_ERROR"
