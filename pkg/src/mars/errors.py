"""Exception taxonomy shared across the package.

Every documented failure path raises one of these, never a bare ValueError,
so callers (and the CLI exit-code mapping) can tell validation problems from
runtime failures.
"""

from __future__ import annotations


class MarsError(Exception):
    """Base class for all library errors."""


class ConfigError(MarsError):
    """Invalid argument, configuration value, or constructor invariant."""


class DimensionMismatchError(MarsError):
    def __init__(self, expected: int, got: int, context: str = ""):
        self.expected = expected
        self.got = got
        where = f" ({context})" if context else ""
        super().__init__(f"dimension mismatch{where}: expected {expected}, got {got}")


class EmptyDatasetError(MarsError):
    """An operation that needs data received none (or too little)."""


class DivergenceError(MarsError):
    """Training produced a non-finite loss, gradient, or parameter vector."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        extra = f": {detail}" if detail else ""
        super().__init__(f"training diverged at step {step}{extra}")


class DatasetFormatError(MarsError):
    """A dataset or config file violated its schema."""

    def __init__(self, path: str, line: int | None, reason: str):
        self.path = path
        self.line = line
        at = f"{path}:{line}" if line is not None else path
        super().__init__(f"{at}: {reason}")


class AugmentationError(MarsError):
    """Variant generation failed; carries the id of the affected tuple."""

    def __init__(self, reason: str, parent_id: str = ""):
        self.parent_id = parent_id
        tag = f" [tuple {parent_id}]" if parent_id else ""
        super().__init__(f"{reason}{tag}")


class ParaphraseServiceError(AugmentationError):
    """The external paraphrase service timed out, errored, or replied malformed."""


class AssumptionViolationError(MarsError):
    """A margin-regime or feature-diversity precondition failed."""

    def __init__(self, inequality: str, offending_ids: tuple[str, ...] = ()):
        self.inequality = inequality
        self.offending_ids = offending_ids
        ids = f" (tuples: {', '.join(offending_ids[:8])}{'...' if len(offending_ids) > 8 else ''})" if offending_ids else ""
        super().__init__(f"assumption violated: {inequality}{ids}")


class NotSymmetricError(MarsError):
    """A matrix expected to be symmetric was not, beyond tolerance."""
