"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``kind`` and an optional
``detail`` dict so the CLI can serialize failures as JSON.
"""

from __future__ import annotations


class RelabError(Exception):
    """Base class for all package errors."""

    kind = "error"

    def __init__(self, message: str, **detail):
        super().__init__(message)
        self.detail = detail

    def to_json(self) -> dict:
        return {"error": self.kind, "message": str(self), "detail": self.detail}


class ShapeMismatchError(RelabError):
    """Operands of a tensor primitive have incompatible shapes."""

    kind = "shape_mismatch"

    def __init__(self, op: str, **operands):
        shapes = ", ".join(f"{name}={tuple(shape)}" for name, shape in operands.items())
        super().__init__(f"{op}: incompatible shapes ({shapes})", op=op,
                         shapes={k: list(v) for k, v in operands.items()})


class GradientError(RelabError):
    """Backward pass preconditions violated (non-scalar loss, foreign tensor)."""

    kind = "gradient"


class CheckpointFormatError(RelabError):
    """Checkpoint file is malformed; message names the offending field/offset."""

    kind = "checkpoint_format"


class SurgeryPlanError(RelabError):
    """A surgery plan is invalid for the target checkpoint."""

    kind = "surgery_plan"


class DataError(RelabError):
    """Dataset generation or subsampling precondition violated."""

    kind = "data"


class TrialDivergedError(RelabError):
    """Training produced a non-finite loss or gradient."""

    kind = "trial_diverged"


class StatsError(RelabError):
    """Statistical estimator precondition violated (degenerate input)."""

    kind = "stats"


class ManifestError(RelabError):
    """Experiment manifest failed validation."""

    kind = "manifest"


class StoreError(RelabError):
    """Results store is missing, incomplete, or corrupt."""

    kind = "store"

    def __init__(self, message: str, missing_cells: list[str] | None = None, **detail):
        if missing_cells is not None:
            detail["missing_cells"] = missing_cells
        super().__init__(message, **detail)
        self.missing_cells = missing_cells or []


class BackendError(RelabError):
    """Requested kernel backend is unknown or unavailable."""

    kind = "backend"
