"""Exception types raised by the public API."""


class CrystalsegError(Exception):
    """Base class for all package-specific errors."""


class NoSuchInstance(CrystalsegError, ValueError):
    """Requested instance id is absent from the label map."""


class ShapeMismatch(CrystalsegError, ValueError):
    """Arrays that must share dimensions do not."""


class BadSchedule(CrystalsegError, ValueError):
    """Resize schedule override is empty, out of range, or lacks 1.0."""


class BadRect(CrystalsegError, ValueError):
    """Patch rectangle falls outside the image bounds."""


class BadThresholds(CrystalsegError, ValueError):
    """Attention thresholds are not strictly decreasing from 100."""


class ScaleCountMismatch(CrystalsegError, ValueError):
    """Number of per-scale predictions disagrees with the attention stack."""


class PredictionUnavailable(CrystalsegError, RuntimeError):
    """External prediction file missing for a requested (image, factor)."""


class EmptyOperands(CrystalsegError, ValueError):
    """Set overlap is undefined because both operands are empty."""


class EmptyInstance(CrystalsegError, ValueError):
    """Instance has zero area."""


class EmptyLabelMap(CrystalsegError, ValueError):
    """Label map contains no instances."""


class SynthInfeasible(CrystalsegError, RuntimeError):
    """Generator parameters cannot be satisfied (dims, margins, seeds)."""


class ManifestMismatch(CrystalsegError, ValueError):
    """Dataset manifest and prediction files disagree on image ids."""


class ConfigError(CrystalsegError, ValueError):
    """Config document has unknown keys or ill-typed values."""
