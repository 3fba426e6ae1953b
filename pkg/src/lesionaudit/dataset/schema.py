"""Lesion taxonomy, sample records, and the metadata table."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

LESION_CLASSES = ("nv", "mel", "bkl", "bcc", "akiec", "df", "vasc")
DANGEROUS = frozenset({"mel", "bcc", "akiec"})
BENIGN = frozenset({"nv", "bkl", "df", "vasc"})

SEXES = ("male", "female")
TONE_GROUPS = ("light", "dark")

METADATA_COLUMNS = ("sample_id", "image", "dx", "sex", "tone", "age")


class DatasetError(ValueError):
    pass


def threat(lesion_class: str) -> str:
    """'Dangerous' for mel/bcc/akiec, 'Benign' otherwise."""
    if lesion_class not in LESION_CLASSES:
        raise DatasetError(f"unknown lesion class {lesion_class!r}")
    return "Dangerous" if lesion_class in DANGEROUS else "Benign"


def threat_label(lesion_class: str) -> int:
    return 1 if threat(lesion_class) == "Dangerous" else 0


def class_index(lesion_class: str) -> int:
    try:
        return LESION_CLASSES.index(lesion_class)
    except ValueError:
        raise DatasetError(f"unknown lesion class {lesion_class!r}") from None


def collapse_tone(tone6) -> str:
    """Map the six-level tone scale to light (1-3) or dark (4-6)."""
    if tone6 is None or isinstance(tone6, bool) or tone6 not in (1, 2, 3, 4, 5, 6):
        raise DatasetError(f"tone must be in 1..6, got {tone6!r}")
    return "light" if tone6 <= 3 else "dark"


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    image: str
    lesion_class: str
    sex: str = "unknown"
    tone6: int | None = None
    age: float | None = None
    # set on augmented copies produced by balancing
    source_id: str | None = None
    transform: str | None = None

    @property
    def threat(self) -> str:
        return threat(self.lesion_class)

    @property
    def tone2(self) -> str:
        return "unknown" if self.tone6 is None else collapse_tone(self.tone6)

    def label(self, scheme: str) -> int:
        if scheme == "lesion7":
            return class_index(self.lesion_class)
        if scheme == "threat":
            return threat_label(self.lesion_class)
        raise DatasetError(f"unknown label scheme {scheme!r}")

    def group(self, axis: str) -> str:
        if axis == "sex":
            return self.sex
        if axis == "tone":
            return self.tone2
        raise DatasetError(f"unknown group axis {axis!r}")

    def with_(self, **changes) -> "SampleRecord":
        return replace(self, **changes)


def _parse_sex(value: str) -> str:
    value = value.strip().lower()
    return value if value in SEXES else "unknown"


def _parse_tone(value: str, row: int) -> int | None:
    value = value.strip()
    if value == "" or value.lower() == "unknown":
        return None
    try:
        tone = int(value)
    except ValueError:
        raise DatasetError(f"row {row}: tone {value!r} is not an integer") from None
    if not 1 <= tone <= 6:
        raise DatasetError(f"row {row}: tone {tone} outside 1..6")
    return tone


def load_metadata(path) -> list[SampleRecord]:
    """Parse ``sample_id,image,dx,sex,tone,age``; blank/unknown sex and tone stay unknown."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in METADATA_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"{path}: missing required column(s) {missing}")
        records = []
        seen = set()
        for row_no, row in enumerate(reader, start=2):
            dx = row["dx"].strip()
            if dx not in LESION_CLASSES:
                raise DatasetError(f"row {row_no}: unknown dx code {dx!r}")
            sid = row["sample_id"].strip()
            if sid in seen:
                raise DatasetError(f"row {row_no}: duplicate sample_id {sid!r}")
            seen.add(sid)
            age = row["age"].strip()
            records.append(SampleRecord(
                sample_id=sid,
                image=row["image"].strip(),
                lesion_class=dx,
                sex=_parse_sex(row["sex"]),
                tone6=_parse_tone(row["tone"], row_no),
                age=float(age) if age else None,
            ))
    return records


def write_metadata(records, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METADATA_COLUMNS)
        for r in records:
            age = "" if r.age is None else (str(int(r.age)) if float(r.age).is_integer() else str(r.age))
            writer.writerow([r.sample_id, r.image, r.lesion_class, r.sex,
                             "" if r.tone6 is None else r.tone6, age])
    return path


def class_histogram(records) -> dict[str, int]:
    counts = Counter(r.lesion_class for r in records)
    return {c: counts.get(c, 0) for c in LESION_CLASSES}
