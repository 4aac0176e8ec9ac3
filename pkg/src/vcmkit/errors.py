"""Exception taxonomy shared across the toolkit.

Every parser and codec raises subclasses of VcmError; arbitrary byte input
must never surface an untyped exception.
"""


class VcmError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(VcmError):
    """A value violates a type invariant (non-finite floats, bad dims, ...)."""


class ContractError(VcmError):
    """Caller broke an operation precondition (shape mismatch, bad config)."""


class FormatError(VcmError):
    """Serialized data is malformed (bad magic, inconsistent geometry)."""


class TruncationError(FormatError):
    """Input ended before the declared payload was complete."""

    def __init__(self, expected: int, actual: int, context: str = ""):
        self.expected = expected
        self.actual = actual
        msg = f"expected {expected} bytes, got {actual}"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class OverrunError(FormatError):
    """A declared length exceeds the bytes actually available."""


class ChecksumError(FormatError):
    """Container checksum does not match its payload."""


class DecodeError(VcmError):
    """A coded payload cannot be decoded."""

    def __init__(self, message: str, stream: str = "", frame_index: int | None = None):
        self.stream = stream
        self.frame_index = frame_index
        parts = [message]
        if stream:
            parts.append(f"stream={stream}")
        if frame_index is not None:
            parts.append(f"frame={frame_index}")
        super().__init__("; ".join(parts))


class DegenerateCurveError(VcmError):
    """A rate-quality sweep collapsed to fewer than two frontier points."""


class IncomparableCurvesError(VcmError):
    """Two rate-quality curves share no quality overlap."""


class InfeasibleBudgetError(VcmError):
    """No selection fits the resource bound; carries the shortfall."""

    def __init__(self, shortfall: float):
        self.shortfall = shortfall
        super().__init__(f"budget infeasible, short by {shortfall:.6g}")


class OracleError(VcmError):
    """An external fidelity oracle failed or returned unparseable output."""
