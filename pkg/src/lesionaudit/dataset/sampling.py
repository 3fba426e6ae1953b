"""Stratified splitting and class balancing."""

from __future__ import annotations

import numpy as np

from .images import AUGMENTATIONS, draw_transform
from .schema import LESION_CLASSES, DatasetError, SampleRecord


def _by_class(records) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        groups.setdefault(r.lesion_class, []).append(i)
    order = {c: k for k, c in enumerate(LESION_CLASSES)}
    return dict(sorted(groups.items(), key=lambda kv: order.get(kv[0], len(order))))


def stratified_split(records, test_fraction: float, seed: int = 0):
    """Per-class random split; each class keeps at least one sample on each side.

    Returns ``(train, test)`` lists in input order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError(f"test_fraction must be in (0, 1), got {test_fraction}")
    records = list(records)
    rng = np.random.default_rng(seed)
    test_idx: set[int] = set()
    for cls, idx in _by_class(records).items():
        n = len(idx)
        if n < 2:
            raise DatasetError(f"class {cls!r} has {n} sample(s); need at least 2 to split")
        k = min(max(int(np.floor(n * test_fraction + 0.5)), 1), n - 1)
        chosen = rng.permutation(n)[:k]
        test_idx.update(idx[j] for j in chosen)
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


def balance(records, target_per_class: int, augmentations=AUGMENTATIONS, seed: int = 0,
            classes=None) -> list[SampleRecord]:
    """Resample every class to exactly ``target_per_class`` entries.

    Surplus classes are downsampled uniformly without replacement. Deficit
    classes keep every original and are padded with augmented copies whose
    ``source_id``/``transform`` fields say how to regenerate the image.
    """
    if target_per_class < 1:
        raise DatasetError(f"target_per_class must be >= 1, got {target_per_class}")
    records = list(records)
    groups = _by_class(records)
    for cls in classes or ():
        if cls not in groups:
            raise DatasetError(f"class {cls!r} is empty; cannot balance")
    rng = np.random.default_rng(seed)
    out: list[SampleRecord] = []
    for cls, idx in groups.items():
        n = len(idx)
        if n >= target_per_class:
            keep = np.sort(rng.choice(n, size=target_per_class, replace=False))
            out.extend(records[idx[j]] for j in keep)
            continue
        out.extend(records[i] for i in idx)
        order = rng.permutation(n)
        for k in range(target_per_class - n):
            src = records[idx[order[k % n]]]
            out.append(src.with_(sample_id=f"{src.sample_id}~aug{k}",
                                 source_id=src.sample_id,
                                 transform=draw_transform(rng, tuple(augmentations))))
    return out
