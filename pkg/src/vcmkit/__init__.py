"""vcmkit: joint pixel/feature video coding with scalable enhancement layers."""

from .errors import (
    ChecksumError,
    ContractError,
    DecodeError,
    DegenerateCurveError,
    FormatError,
    IncomparableCurvesError,
    InfeasibleBudgetError,
    OracleError,
    OverrunError,
    TruncationError,
    ValidationError,
    VcmError,
)
from .model import (
    FeatureTensor,
    Frame,
    KeyFrameSchedule,
    Keypoint,
    KeypointSet,
    VideoClip,
)

__all__ = [
    "ChecksumError",
    "ContractError",
    "DecodeError",
    "DegenerateCurveError",
    "FeatureTensor",
    "FormatError",
    "Frame",
    "IncomparableCurvesError",
    "InfeasibleBudgetError",
    "KeyFrameSchedule",
    "Keypoint",
    "KeypointSet",
    "OracleError",
    "OverrunError",
    "TruncationError",
    "ValidationError",
    "VcmError",
    "VideoClip",
]

__version__ = "0.1.0"
