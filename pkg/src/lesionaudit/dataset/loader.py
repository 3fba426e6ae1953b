"""Turning records into model-ready arrays."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import apply_transform, load_image, resize
from .schema import DatasetError, SampleRecord, load_metadata


@dataclass
class LabeledArrays:
    inputs: np.ndarray          # N × model input shape, float32
    labels: np.ndarray          # N int64
    scheme: str                 # "lesion7" or "threat"
    records: list[SampleRecord]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "LabeledArrays":
        index = np.asarray(index)
        return LabeledArrays(self.inputs[index], self.labels[index], self.scheme,
                             [self.records[i] for i in index])


class ImageSource:
    """Resolves a record to pixels from a dataset directory or an in-memory map."""

    def __init__(self, root=None, images: dict | None = None):
        self.root = Path(root) if root is not None else None
        self.images = images

    @classmethod
    def from_directory(cls, root) -> tuple["ImageSource", list[SampleRecord]]:
        root = Path(root)
        meta = root / "metadata.csv"
        if not meta.exists():
            raise DatasetError(f"{root}: no metadata.csv")
        return cls(root=root), load_metadata(meta)

    def _raw(self, record: SampleRecord) -> np.ndarray:
        if self.images is not None and record.sample_id in self.images:
            px = self.images[record.sample_id]
            return px.astype(np.float32) / np.float32(255.0) if px.dtype == np.uint8 else px
        if self.root is None:
            raise DatasetError(f"no pixels for sample {record.sample_id!r}")
        return load_image(self.root / record.image).data

    def image(self, record: SampleRecord, index: dict[str, SampleRecord] | None = None) -> np.ndarray:
        if record.source_id is not None:
            if index is None or record.source_id not in index:
                raise DatasetError(f"augmented sample {record.sample_id!r} has unknown source")
            base = self._raw(index[record.source_id])
            return apply_transform(base, record.transform)
        return self._raw(record)


def materialize(records, source: ImageSource, input_shape, scheme: str = "lesion7",
                sources: list[SampleRecord] | None = None) -> LabeledArrays:
    """Load, resize and stack images to ``input_shape`` (H×W×3, or a flat length)."""
    records = list(records)
    index = {r.sample_id: r for r in (sources or records)}
    input_shape = tuple(input_shape)
    if len(input_shape) == 1:
        n = input_shape[0]
        if n % 3:
            raise DatasetError(f"flat input length {n} is not a multiple of 3")
        hw = _flat_hw(n)
    else:
        hw = input_shape[:2]
    out = np.empty((len(records),) + input_shape, dtype=np.float32)
    for i, r in enumerate(records):
        img = resize(source.image(r, index), hw).data
        out[i] = img.reshape(input_shape)
    labels = np.array([r.label(scheme) for r in records], dtype=np.int64)
    return LabeledArrays(out, labels, scheme, records)


def _flat_hw(n: int) -> tuple[int, int]:
    if n == 22500:
        return (75, 100)
    pixels = n // 3
    h = int(np.sqrt(pixels * 3 / 4))
    while h > 1 and pixels % h:
        h -= 1
    return (h, pixels // h)


def save_features(path, sample_ids, features) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, sample_id=np.asarray(sample_ids, dtype=str),
                 features=np.asarray(features, dtype=np.float32))
    return path


def load_features(path) -> dict[str, np.ndarray]:
    with np.load(path, allow_pickle=False) as npz:
        ids, feats = npz["sample_id"], npz["features"]
    return {str(s): f for s, f in zip(ids, feats)}


def feature_arrays(records, features: dict[str, np.ndarray], scheme: str) -> LabeledArrays:
    """Stack precomputed backbone features in record order (augmented copies reuse their source)."""
    rows = []
    for r in records:
        key = r.source_id or r.sample_id
        if key not in features:
            raise DatasetError(f"no precomputed features for sample {key!r}")
        rows.append(features[key])
    inputs = np.stack(rows).astype(np.float32) if rows else np.zeros((0, 0), np.float32)
    labels = np.array([r.label(scheme) for r in records], dtype=np.int64)
    return LabeledArrays(inputs, labels, scheme, list(records))


def projection_features(images: np.ndarray, dim: int = 1024, seed: int = 0) -> np.ndarray:
    """Fixed random-projection stand-in for a pretrained backbone.

    Downsamples each image to 24×32, projects with a seeded Gaussian matrix
    and applies ReLU. Only used to exercise feature-consuming heads.
    """
    small = np.stack([resize(img, (24, 32)).data.reshape(-1) for img in images])
    rng = np.random.default_rng(seed)
    proj = rng.normal(0, 1.0 / np.sqrt(small.shape[1]), size=(small.shape[1], dim))
    centered = small - 0.5
    return np.maximum(centered @ proj, 0).astype(np.float32)
