"""Metadata ingestion, label schemes, balancing, and synthetic lesion data."""

from .images import (AUGMENTATIONS, apply_transform, decode_ppm, draw_transform, encode_ppm,
                     load_image, resize, write_ppm)
from .loader import (ImageSource, LabeledArrays, feature_arrays, load_features, materialize,
                     projection_features, save_features)
from .sampling import balance, stratified_split
from .schema import (BENIGN, DANGEROUS, LESION_CLASSES, DatasetError, SampleRecord, class_histogram,
                     class_index, collapse_tone, load_metadata, threat, threat_label, write_metadata)
from .synth import SynthConfig, SynthDataset, render_lesion, synth_generate

__all__ = [
    "AUGMENTATIONS", "BENIGN", "DANGEROUS", "DatasetError", "ImageSource", "LESION_CLASSES",
    "LabeledArrays", "SampleRecord", "SynthConfig", "SynthDataset", "apply_transform", "balance",
    "class_histogram", "class_index", "collapse_tone", "decode_ppm", "draw_transform", "encode_ppm",
    "feature_arrays", "load_features", "load_image", "load_metadata", "materialize",
    "projection_features", "render_lesion", "resize", "save_features", "stratified_split",
    "synth_generate", "threat", "threat_label", "write_metadata", "write_ppm",
]
