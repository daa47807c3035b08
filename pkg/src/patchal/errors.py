"""Exception types shared across the package."""


class PatchalError(Exception):
    """Base class for all errors raised by this package."""


# --- container / volume I/O ---------------------------------------------

class IoFailure(PatchalError):
    """Underlying filesystem read/write failed."""


class BadMagic(PatchalError):
    """File does not start with the volume-container magic."""


class HeaderMismatch(PatchalError):
    """Container header is malformed or disagrees with the payload size."""


class NonFiniteData(PatchalError):
    """Float payload contains NaN or Inf."""


# --- geometry -------------------------------------------------------------

class OutOfBounds(PatchalError):
    """A patch box does not fit inside its containing volume."""


class PatchLargerThanImage(PatchalError):
    """Aggregation window exceeds the image along at least one axis."""


# --- uncertainty ----------------------------------------------------------

class DegenerateStack(PatchalError):
    """Probability stack has no ensemble members."""


# --- query selection ------------------------------------------------------

class EmptyField(PatchalError):
    """Score field contains no candidate placements."""


class InsufficientCandidates(PatchalError):
    """The candidate pool cannot supply the requested number of patches."""


class NoForeground(PatchalError):
    """No foreground voxels are available for a foreground-centered draw."""


class ClassUncoverable(PatchalError):
    """A class exists in the ground truth but no admissible patch covers it."""


# --- synthetic data / learner ----------------------------------------------

class SpecInfeasible(PatchalError):
    """Synthetic shapes cannot fit inside the requested image dimensions."""


class NoAnnotation(PatchalError):
    """Training requested with zero annotated voxels."""


# --- metrics ----------------------------------------------------------------

class ShapeMismatch(PatchalError):
    """Prediction and ground truth have different shapes."""


class DegenerateCurve(PatchalError):
    """Budget curve has fewer than two points or zero budget span."""


class DegenerateFit(PatchalError):
    """Decay fit is undefined because the start and full values coincide."""


class TooFewSamples(PatchalError):
    """Statistical test needs at least two samples per group."""


class RaggedResults(PatchalError):
    """Result cells do not share the same methods or seed counts."""


class MismatchedItems(PatchalError):
    """Rankings do not cover the same item set."""


# --- orchestration ------------------------------------------------------------

class TooFewImages(PatchalError):
    """Dataset is too small to split into train-pool and test."""
