"""Exception types shared across the package."""


class LMCodecError(Exception):
    """Base class; ``code`` is a stable machine-readable identifier."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "type": type(self).__name__, "message": str(self)}


class AudioError(LMCodecError, ValueError):
    code = "audio"


class LoudnessError(LMCodecError, ValueError):
    code = "loudness"


class AlignmentError(LMCodecError, ValueError):
    code = "alignment"


class CorpusError(LMCodecError, ValueError):
    code = "corpus"


class FrontendError(LMCodecError, ValueError):
    code = "frontend"


class ShapeError(LMCodecError, ValueError):
    code = "shape"


class BitstreamError(LMCodecError, ValueError):
    """Malformed bitstream. ``code`` is one of ``bad_magic``,
    ``version_mismatch``, ``truncated``, ``trailing_data`` or ``invalid``."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class StageError(LMCodecError, ValueError):
    code = "stage"


class CheckpointError(LMCodecError, ValueError):
    code = "checkpoint"


class AdapterUnavailable(LMCodecError, RuntimeError):
    code = "adapter_unavailable"


class EvaluationError(LMCodecError, ValueError):
    code = "evaluation"


class ConfigError(LMCodecError, ValueError):
    code = "config"
