from __future__ import annotations

from typing import Any


class ValidTestgenError(Exception):
    """Base error carrying the failing operation and structured context."""

    def __init__(self, message: str, operation: str | None = None, **context: Any):
        self.message = message
        self.operation = operation
        self.context = context
        details = ", ".join(f"{key}={value}" for key, value in context.items())
        suffix = f" (operation={operation}{', ' + details if details else ''})" if operation else ""
        super().__init__(f"{message}{suffix}")


class ContractViolation(ValidTestgenError):
    """A documented precondition was not met by the caller."""


class ShapeError(ValidTestgenError):
    def __init__(self, message: str, left: tuple[int, ...], right: tuple[int, ...], operation: str | None = None):
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{message}: {self.left} vs {self.right}", operation=operation)


class NumericError(ValidTestgenError):
    """A value that must be finite came out NaN or infinite."""


class TrainingError(ValidTestgenError):
    def __init__(self, message: str, epoch: int, stage: str | None = None):
        self.epoch = epoch
        self.stage = stage
        super().__init__(message, operation=stage or "training", epoch=epoch)


class ModelFormatError(ValidTestgenError):
    def __init__(self, message: str, path: str, file_path: str | None = None):
        self.path = path
        self.file_path = file_path
        super().__init__(f"{message} at '{path}'", operation="model_load", file=file_path)


class LayerShapeError(ModelFormatError):
    """Layer widths in a serialized network do not chain."""


class IdxParseError(ValidTestgenError):
    def __init__(self, message: str, file_path: str):
        self.file_path = file_path
        super().__init__(message, operation="idx_parse", file=file_path)


class IdxMagicError(IdxParseError):
    pass


class IdxTruncatedError(IdxParseError):
    pass


class IdxCountMismatchError(IdxParseError):
    pass


class SubsetSizeError(ValidTestgenError):
    pass


class DegenerateCalibrationError(ValidTestgenError):
    pass


class ConfigError(ValidTestgenError):
    def __init__(self, message: str, field: str):
        self.field = field
        super().__init__(f"{message}: {field}", operation="config")


class MissingArtifactError(ValidTestgenError):
    def __init__(self, artifact: str, stage: str):
        self.artifact = artifact
        self.stage = stage
        super().__init__(f"Missing artifact {artifact}", operation=stage)


class SafetyViolation(ValidTestgenError):
    """A VAE-guided suite contained a record that fails the validity gate."""
