"""Exception types shared across the pipeline."""


class SmolderError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(SmolderError, ValueError):
    """Invalid configuration value, unknown key, or violated config invariant."""


class InputError(SmolderError, ValueError):
    """Inputs with inconsistent shapes or otherwise unusable content."""


class ShapeError(InputError):
    """Tensor or frame shape that violates a stage contract."""


class IngestionError(SmolderError):
    """Unreadable or mismatched video/frame sources."""


class CheckpointError(SmolderError):
    """Checkpoint cannot be loaded: missing file, version or config mismatch."""


class BackboneLoadError(CheckpointError):
    """Pretrained backbone weights requested but not available."""


class TrainingDiverged(SmolderError, RuntimeError):
    """Loss became non-finite during optimization."""
