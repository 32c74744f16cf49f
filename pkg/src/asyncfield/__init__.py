"""Fully-connected temporal random field with a latent intent, trained asynchronously."""
from .model import (
    FieldInstance,
    FrameAssignment,
    KernelConfig,
    LabelSpace,
    SemanticPotentials,
    TermWeights,
    charades_space,
    desk_space,
)

__version__ = "0.1.0"

__all__ = [
    "FieldInstance",
    "FrameAssignment",
    "KernelConfig",
    "LabelSpace",
    "SemanticPotentials",
    "TermWeights",
    "__version__",
    "charades_space",
    "desk_space",
]
