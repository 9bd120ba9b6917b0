"""Directory-per-class dataset layout, severity labels and split manifests.

Expected layout::

    root/
      physical_damage/*.png|jpg   one directory per class slug, all nine required
      ...
      dust/
      severity.csv                optional: image_id,grade (nil|minor|major)

An ``image_id`` is the POSIX path relative to ``root``, e.g.
``soiling/img_0003.png``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestError
from .imaging import save_image
from .severity import SeverityGrade
from .synthetic import make_dataset
from .taxonomy import DefectClass

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
SEVERITY_CSV = "severity.csv"
SPLIT_HEADER = ["image_id", "class_code", "split"]


@dataclass(frozen=True)
class DatasetItem:
    image_id: str
    path: Path
    label: DefectClass


@dataclass
class DatasetManifest:
    root: Path
    items: list
    severity_csv: Path | None = None

    @property
    def labels(self):
        return [int(item.label) for item in self.items]

    def by_id(self) -> dict:
        return {item.image_id: item for item in self.items}


def list_images(directory) -> list:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"dataset root {root} is not a directory")
    missing = [c.slug for c in DefectClass if not (root / c.slug).is_dir()]
    if missing:
        raise ManifestError(f"dataset {root} lacks class directories: {', '.join(missing)}")
    items = []
    for c in DefectClass:
        for path in list_images(root / c.slug):
            items.append(DatasetItem(f"{c.slug}/{path.name}", path, c))
    if not items:
        raise ManifestError(f"dataset {root} contains no images")
    sev = root / SEVERITY_CSV
    return DatasetManifest(root, items, sev if sev.is_file() else None)


def read_severity_csv(path) -> dict:
    """``image_id -> SeverityGrade``."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"image_id", "grade"} <= set(reader.fieldnames):
            raise ManifestError(f"{path}: header must contain image_id and grade")
        for lineno, row in enumerate(reader, start=2):
            try:
                out[row["image_id"].strip()] = SeverityGrade.from_slug(row["grade"])
            except KeyError:
                raise ManifestError(f"{path}:{lineno}: unknown grade {row['grade']!r}") from None
    return out


def write_severity_csv(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "grade"])
        for image_id, g in labels:
            writer.writerow([image_id, SeverityGrade(g).slug])


def write_split_manifest(path, items, train_idx, test_idx) -> None:
    split = {i: "train" for i in train_idx}
    split.update({i: "test" for i in test_idx})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SPLIT_HEADER)
        for i, item in enumerate(items):
            writer.writerow([item.image_id, int(item.label), split[i]])


def read_split_manifest(path):
    """Return ``(train_ids, test_ids)``; raises if an id appears in both."""
    train, test = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SPLIT_HEADER:
            raise ManifestError(f"{path}: expected header {','.join(SPLIT_HEADER)}")
        for row in reader:
            if row["split"] == "train":
                train.append(row["image_id"])
            elif row["split"] == "test":
                test.append(row["image_id"])
            else:
                raise ManifestError(f"{path}: bad split value {row['split']!r}")
    overlap = set(train) & set(test)
    if overlap:
        raise ManifestError(f"{path}: {len(overlap)} images are in both train and test")
    return train, test


def write_synthetic(root, per_class: int = 20, size: int = 64, seed: int = 0) -> int:
    """Materialize the procedural dataset on disk; returns the image count."""
    root = Path(root)
    labels = []
    counters = {c: 0 for c in DefectClass}
    for c in DefectClass:
        (root / c.slug).mkdir(parents=True, exist_ok=True)
    for sample in make_dataset(per_class, size, seed):
        k = counters[sample.defect]
        counters[sample.defect] += 1
        image_id = f"{sample.defect.slug}/img_{k:04d}.png"
        save_image(sample.image, root / image_id)
        labels.append((image_id, sample.grade))
    write_severity_csv(root / SEVERITY_CSV, labels)
    log.info("wrote %d synthetic images to %s", len(labels), root)
    return len(labels)
