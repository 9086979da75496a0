"""Placement and selection networks plus their training and decoding.

`placement` scores 48 step slots per beat from bidirectional audio
context; `selection` assigns arrow symbols to placed steps
autoregressively; `training` runs the shared optimization regimen and
checkpointing; `generate` decodes selections under hold-validity
masking.
"""

from stepsmith.models.placement import (
    PlacementConfig,
    PlacementModel,
    placement_forward,
    predict_placements,
)
from stepsmith.models.selection import (
    SelectionConfig,
    SelectionModel,
    selection_forward,
)
from stepsmith.models.training import (
    TrainConfig,
    TrainingReport,
    load_checkpoint,
    train_placement,
    train_selection,
)
from stepsmith.models.generate import SamplingConfig, generate_steps

__all__ = [
    "PlacementConfig",
    "PlacementModel",
    "placement_forward",
    "predict_placements",
    "SelectionConfig",
    "SelectionModel",
    "selection_forward",
    "TrainConfig",
    "TrainingReport",
    "load_checkpoint",
    "train_placement",
    "train_selection",
    "SamplingConfig",
    "generate_steps",
]
