"""Exception hierarchy.

Every error carries a short machine-readable ``code`` which the CLI prints as
the prefix of its single-line error message.
"""


class RidgeVLPError(Exception):
    code = "E_GENERIC"


class DimensionError(RidgeVLPError, ValueError):
    code = "E_DIMENSION"


class ConfigurationError(RidgeVLPError, ValueError):
    code = "E_CONFIG"


class DomainError(RidgeVLPError, ValueError):
    code = "E_DOMAIN"


class ImageFormatError(RidgeVLPError, ValueError):
    code = "E_FORMAT"


class ParseError(RidgeVLPError, ValueError):
    code = "E_PARSE"

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class ValidationError(RidgeVLPError, ValueError):
    code = "E_VALIDATION"


class UsageError(RidgeVLPError, RuntimeError):
    code = "E_USAGE"


class DegenerateBatchError(RidgeVLPError, ValueError):
    code = "E_DEGENERATE_BATCH"


class TrainingError(RidgeVLPError, RuntimeError):
    code = "E_NONFINITE"


class CheckpointError(RidgeVLPError, ValueError):
    code = "E_CHECKPOINT"
