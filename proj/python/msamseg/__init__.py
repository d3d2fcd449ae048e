"""PET-CT tumour segmentation with a multimodal spatial attention module."""

from ._msamseg import (
    ConfigError,
    IoError,
    LoadError,
    Model,
    ModelConfig,
    ShapeError,
    ValidationError,
    generate_phantoms,
    gradcheck_ops,
    gradient_check,
    load_model,
    load_slices,
    metrics,
    run_cli,
    table1_matrix,
)

__all__ = [
    "ConfigError",
    "IoError",
    "LoadError",
    "Model",
    "ModelConfig",
    "ShapeError",
    "ValidationError",
    "generate_phantoms",
    "gradcheck_ops",
    "gradient_check",
    "load_model",
    "load_slices",
    "metrics",
    "run_cli",
    "table1_matrix",
]
