"""Exception hierarchy for the goen engine.

Every failure mode gets its own class so callers and the CLI can map errors
to exit codes without string matching. Messages should name the offending
field, file, or dimension.
"""

from __future__ import annotations


class GoenError(Exception):
    """Base class for every error raised by this package."""


# ---------------------------------------------------------------------------
# file and format errors
# ---------------------------------------------------------------------------

class BadMagic(GoenError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(GoenError):
    """File magic is known but the version field is not supported."""


class TruncatedFile(GoenError):
    """File ends before the payload promised by its header."""


class IoFailure(GoenError):
    """Underlying OS read/write failed."""


class InvariantViolation(GoenError, ValueError):
    """A declared data invariant does not hold; message names the field."""


# ---------------------------------------------------------------------------
# input and shape errors
# ---------------------------------------------------------------------------

class CountOverflow(GoenError, ValueError):
    """Requested split counts exceed the number of available rows."""


class MissingLabels(GoenError):
    """Operation needs per-row labels but the set carries none."""


class MissingLogits(GoenError):
    """Operation needs per-row logits but the set carries none."""


class MissingInput(GoenError):
    """A score rule needs an auxiliary input that was not provided."""


class BadLabel(GoenError, ValueError):
    """Label outside [0, num_classes)."""


class EmptyInput(GoenError, ValueError):
    """An input collection that must be non-empty is empty."""


class DimensionMismatch(GoenError, ValueError):
    """Vector or matrix dimensions disagree with the model or each other."""


class EmptyClass(GoenError, ValueError):
    """A class in [0, C) has no training samples."""

    def __init__(self, class_index: int, message: str | None = None):
        self.class_index = int(class_index)
        super().__init__(message or f"class {class_index} has no samples")


# ---------------------------------------------------------------------------
# numeric errors
# ---------------------------------------------------------------------------

class ZeroVector(GoenError, ValueError):
    """Vector norm below 1e-30; cannot be normalised."""


class NotPositiveDefinite(GoenError, ValueError):
    """Matrix that must be SPD is not."""


class NotSymmetric(GoenError, ValueError):
    """Matrix that must be symmetric is not (beyond tolerance)."""


class NotSimplex(GoenError, ValueError):
    """Probability vector has negative mass or row sum off 1 beyond 1e-5."""


class KTooLarge(GoenError, ValueError):
    """Neighbour count k exceeds the number of reference rows."""


class TooFewMembers(GoenError, ValueError):
    """Ensemble statistic needs at least two member predictions."""


class AlphaBelowOne(GoenError, ValueError):
    """Evidential concentration parameter below 1."""


class DegenerateInput(GoenError, ValueError):
    """Input carries no signal for the requested fit (e.g. constant logits)."""


class NonFiniteInput(GoenError, ValueError):
    """NaN or infinity where a finite value is required."""


# ---------------------------------------------------------------------------
# pipeline errors
# ---------------------------------------------------------------------------

class SameFileForCalibAndEval(GoenError):
    """The OOD calibration file also appears as an OOD evaluation file."""


# Errors that the CLI reports as numeric failures (exit code 4); everything
# else under GoenError is input validation (exit code 2) except the leakage
# guard (exit code 3).
NUMERIC_ERRORS = (
    ZeroVector,
    NotPositiveDefinite,
    NotSymmetric,
    NonFiniteInput,
    DegenerateInput,
)
