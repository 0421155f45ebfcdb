"""Dataset manifests: class taxonomy, per-image records, seeded stratified splits.

On disk a manifest is line-delimited JSON. The first line is a header,
and every following line is one record::

    {"format": "fdk-dataset/1", "seed": 42, "ratio": 0.8, "classes": ["a", "b"]}
    {"path": "a/img_0000.ppm", "label": "a", "split": "TRAIN", "hash": "0f3a9c1d2b4e5f60"}

Record paths are stored relative to the manifest file's directory.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

from .._io import atomic_write_text
from ..errors import ClassTooSmall, EmptyClassDir, ManifestError, NoClasses
from ..rng import Xorshift64Star

FORMAT_TAG = "fdk-dataset/1"


class Split(str, enum.Enum):
    TRAIN = "TRAIN"
    VALIDATION = "VALIDATION"
    TEST = "TEST"
    UNASSIGNED = "UNASSIGNED"


@dataclass(frozen=True)
class ImageRecord:
    path: str
    class_label: str
    split: Split
    content_hash: int


@dataclass(frozen=True)
class DatasetManifest:
    classes: tuple[str, ...]
    records: tuple[ImageRecord, ...]
    seed: int = 0
    ratio: float | None = None

    def __post_init__(self):
        if not self.classes:
            raise NoClasses("a dataset needs at least one class")
        known = set(self.classes)
        for r in self.records:
            if r.class_label not in known:
                raise ManifestError(f"record {r.path} has unknown label {r.class_label!r}")

    def label_index(self, label: str) -> int:
        return self.classes.index(label)

    def in_split(self, split: Split) -> list[ImageRecord]:
        return [r for r in self.records if r.split is split]

    def counts(self) -> dict[str, dict[Split, int]]:
        out = {c: {s: 0 for s in Split} for c in self.classes}
        for r in self.records:
            out[r.class_label][r.split] += 1
        return out


def content_hash(path) -> int:
    """64-bit BLAKE2b digest of the file bytes."""
    digest = hashlib.blake2b(Path(path).read_bytes(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _visible(entries):
    return sorted(e for e in entries if not e.name.startswith("."))


def build_manifest(root) -> DatasetManifest:
    """Scan ``root/<class>/<image>``; classes are the sorted subdirectory names."""
    root = Path(root)
    if not root.is_dir():
        raise NoClasses(f"{root} is not a directory")
    class_dirs = [d for d in _visible(root.iterdir()) if d.is_dir()]
    if not class_dirs:
        raise NoClasses(f"{root} has no class subdirectories")
    records = []
    for d in class_dirs:
        files = [f for f in _visible(d.iterdir()) if f.is_file()]
        if not files:
            raise EmptyClassDir(f"class directory {d} contains no images")
        for f in files:
            records.append(ImageRecord(str(f), d.name, Split.UNASSIGNED, content_hash(f)))
    records.sort(key=lambda r: r.path)
    return DatasetManifest(tuple(d.name for d in class_dirs), tuple(records))


def train_count(ratio: float, n: int) -> int:
    """floor(ratio * n), evaluated exactly on the decimal value of ``ratio``."""
    return math.floor(Fraction(repr(float(ratio))) * n)


def split_dataset(m: DatasetManifest, ratio: float, seed: int) -> DatasetManifest:
    """Per-class seeded shuffle; the first floor(ratio * n_c) go to TRAIN, the rest to VALIDATION.

    TEST records are left alone. Class ``k`` shuffles with the generator
    seeded by ``(seed, k)``.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    assigned: dict[int, Split] = {}
    for k, cls in enumerate(m.classes):
        members = [i for i, r in enumerate(m.records) if r.class_label == cls and r.split is not Split.TEST]
        if not members:
            raise ClassTooSmall(f"class {cls!r} has no records to split")
        Xorshift64Star(seed, k).shuffle(members)
        cut = train_count(ratio, len(members))
        for pos, i in enumerate(members):
            assigned[i] = Split.TRAIN if pos < cut else Split.VALIDATION
    records = tuple(
        replace(r, split=assigned[i]) if i in assigned else r for i, r in enumerate(m.records)
    )
    return replace(m, records=records, seed=seed, ratio=ratio)


def assign_all(m: DatasetManifest, split: Split) -> DatasetManifest:
    """Put every record in ``split``, e.g. TEST for an external validation collection."""
    return replace(m, records=tuple(replace(r, split=split) for r in m.records))


def dumps_manifest(m: DatasetManifest, base_dir=None) -> str:
    base = Path(base_dir) if base_dir is not None else None
    header = {"format": FORMAT_TAG, "seed": m.seed, "ratio": m.ratio, "classes": list(m.classes)}
    lines = [json.dumps(header)]
    for r in m.records:
        path = Path(os.path.relpath(r.path, base)).as_posix() if base is not None else r.path
        lines.append(json.dumps(
            {"path": path, "label": r.class_label, "split": r.split.value, "hash": f"{r.content_hash:016x}"}
        ))
    return "\n".join(lines) + "\n"


def save_manifest(m: DatasetManifest, path) -> None:
    path = Path(path)
    atomic_write_text(path, dumps_manifest(m, path.parent.resolve()))


def loads_manifest(text: str, base_dir=None) -> DatasetManifest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ManifestError("empty dataset manifest")
    try:
        header = json.loads(lines[0])
        if header.get("format") != FORMAT_TAG:
            raise ManifestError(f"unsupported dataset manifest format {header.get('format')!r}")
        records = []
        for ln in lines[1:]:
            doc = json.loads(ln)
            path = doc["path"]
            if base_dir is not None and not os.path.isabs(path):
                path = os.path.normpath(os.path.join(base_dir, path))
            records.append(ImageRecord(path, doc["label"], Split(doc["split"]), int(doc["hash"], 16)))
        return DatasetManifest(tuple(header["classes"]), tuple(records), int(header["seed"]), header["ratio"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ManifestError):
            raise
        raise ManifestError(f"malformed dataset manifest: {exc}") from None


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    return loads_manifest(path.read_text(encoding="utf-8"), path.parent.resolve())
