"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
first token of its one-line failure message so callers can parse it.
"""


class MbvError(Exception):
    category = "error"


class IngestionError(MbvError):
    category = "ingestion"


class EmptyInputError(MbvError):
    category = "empty-input"


class NumericInputError(MbvError, ValueError):
    category = "numeric-input"


class ConfigurationError(MbvError, ValueError):
    category = "config"


class ShapeError(ConfigurationError):
    category = "shape"


class SpeakerLookupError(MbvError, KeyError):
    category = "speaker-lookup"

    def __str__(self):
        return Exception.__str__(self)


class DivergenceError(MbvError, FloatingPointError):
    category = "divergence"

    def __init__(self, message, step=None, snapshot=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
        self.snapshot = snapshot or {}


class PreconditionError(MbvError):
    category = "precondition"


class CheckpointError(MbvError):
    category = "checkpoint"
