"""Architecture DSL, reference model presets, parameter accounting and persistence."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import (Activation, ArchitectureSpec, Backbone, BatchNorm, Conv2D, Dense, Dropout,
                     Flatten, MaxPool2D, Reshape, SpecError, param_count)
from .zoo import (PRESETS, ModelParams, build, desk_cnn, feature_head, forward, model1a, model1b, model2a,
                  model2b, predict, preset)

__all__ = [
    "Activation", "ArchitectureSpec", "Backbone", "BatchNorm", "CheckpointError", "Conv2D", "Dense",
    "Dropout", "Flatten", "MaxPool2D", "ModelParams", "PRESETS", "Reshape", "SpecError", "build",
    "desk_cnn", "feature_head", "forward", "load_checkpoint", "model1a", "model1b", "model2a", "model2b",
    "param_count", "predict", "preset", "save_checkpoint",
]
