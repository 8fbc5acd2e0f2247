"""Exception types shared across the toolkit.

Plain ``ValueError`` is used for ordinary argument validation; the types
here exist where callers need to distinguish the failure class (parsers
report line numbers, the pipeline reports which stage broke).
"""

from __future__ import annotations


class FoveateError(Exception):
    """Base class for toolkit-specific failures."""


class ParseError(FoveateError, ValueError):
    """A text or binary input failed to parse.

    Carries the 1-based line number for text formats when known.
    """

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ValidationError(FoveateError, ValueError):
    """Input is well-formed but violates a cross-field constraint."""


class DegenerateInputError(FoveateError, ValueError):
    """Geometric input admits no unique solution (e.g. collinear points)."""


class PointAtInfinityError(FoveateError, ArithmeticError):
    """A projective transform sent a finite point to infinity."""


class StageError(FoveateError, RuntimeError):
    """A pipeline stage failed.

    Carries the stage name plus the class label and cluster index being
    processed, so batch runs can report exactly what broke and move on.
    """

    def __init__(
        self,
        stage: str,
        message: str,
        class_label: str | None = None,
        cluster_index: int | None = None,
    ):
        parts = [f"stage {stage}"]
        if class_label is not None:
            parts.append(f"class {class_label}")
        if cluster_index is not None:
            parts.append(f"cluster {cluster_index}")
        super().__init__(f"{' / '.join(parts)}: {message}")
        self.stage = stage
        self.class_label = class_label
        self.cluster_index = cluster_index
