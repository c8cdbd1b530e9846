"""Synthetic simple-shapes dataset generation and IDX file ingestion.

The shapes corpus is a full Cartesian product: 3 shape families x 3 variants
x 3 outline thicknesses x 5 colors = 135 images, drawn as centered outlines
on a white background. IDX parsing follows the classic big-endian layout
(magic 0x00000803 for images, 0x00000801 for labels) with optional gzip.
"""

from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import (
    IdxConsistencyError,
    IdxFormatError,
    IdxTruncationError,
    InputError,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

FAMILIES = ("circle", "triangle", "rectangle")
VARIANTS = {
    "circle": ("circle", "oval-wide", "oval-tall"),
    "triangle": ("triangle-equilateral", "triangle-tall", "triangle-wide"),
    "rectangle": ("square", "rect-tall", "rect-wide"),
}
COLORS = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "magenta": (255, 0, 255),
}
THICKNESS_FRACTIONS = (0.02, 0.05, 0.08)


@dataclass(frozen=True)
class Attributes:
    family: str
    variant: str
    color: str
    thickness: int  # index into the stroke-width scale


@dataclass
class ImageRecord:
    id: str
    pixels: np.ndarray  # H x W x C, uint8
    attributes: Attributes | None = None
    label: int | None = None


@dataclass
class DatasetManifest:
    name: str
    image_shape: tuple[int, int, int]
    count: int
    train_ids: list[str] = field(default_factory=list)
    test_ids: list[str] = field(default_factory=list)
    seed: int = 0
    vocabularies: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "image_shape": list(self.image_shape),
            "count": self.count,
            "train_ids": self.train_ids,
            "test_ids": self.test_ids,
            "seed": self.seed,
            "vocabularies": self.vocabularies,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        return cls(
            name=d["name"],
            image_shape=tuple(d["image_shape"]),
            count=d["count"],
            train_ids=list(d.get("train_ids", [])),
            test_ids=list(d.get("test_ids", [])),
            seed=d.get("seed", 0),
            vocabularies=d.get("vocabularies", {}),
        )


def stroke_widths(size: int) -> tuple[int, ...]:
    widths = tuple(max(1, round(size * f)) for f in THICKNESS_FRACTIONS)
    if len(set(widths)) != len(widths):
        raise InputError(f"image size {size} cannot render distinct outline thicknesses")
    return widths


def _shape_mask(variant: str, size: int, width: int) -> np.ndarray:
    """Boolean outline mask, shared by all colors of one (variant, thickness)."""
    img = Image.new("L", (size, size), 255)
    draw = ImageDraw.Draw(img)
    c = size / 2.0
    b = 0.6 * size  # bounding box of the widest extent

    def box(w: float, h: float) -> list[float]:
        return [c - w / 2, c - h / 2, c + w / 2 - 1, c + h / 2 - 1]

    if variant == "circle":
        draw.ellipse(box(b, b), outline=0, width=width)
    elif variant == "oval-wide":
        draw.ellipse(box(b, 0.6 * b), outline=0, width=width)
    elif variant == "oval-tall":
        draw.ellipse(box(0.6 * b, b), outline=0, width=width)
    elif variant == "square":
        draw.rectangle(box(b, b), outline=0, width=width)
    elif variant == "rect-tall":
        draw.rectangle(box(0.6 * b, b), outline=0, width=width)
    elif variant == "rect-wide":
        draw.rectangle(box(b, 0.6 * b), outline=0, width=width)
    elif variant in ("triangle-equilateral", "triangle-tall", "triangle-wide"):
        base = {"triangle-equilateral": b, "triangle-tall": 0.6 * b, "triangle-wide": b}[variant]
        height = {"triangle-equilateral": b * np.sqrt(3) / 2, "triangle-tall": b, "triangle-wide": 0.5 * b}[variant]
        top = (c, c - height / 2)
        left = (c - base / 2, c + height / 2)
        right = (c + base / 2, c + height / 2)
        draw.polygon([top, right, left], outline=0, width=width)
    else:
        raise InputError(f"unknown shape variant {variant!r}")
    return np.asarray(img) < 128


def generate_shapes(size: int = 64, seed: int = 0) -> tuple[DatasetManifest, list[ImageRecord]]:
    """Render the 135-image shapes corpus and a seeded 120/15 train/test split."""
    if size < 32:
        raise InputError(f"image size must be at least 32, got {size}")
    widths = stroke_widths(size)
    records: list[ImageRecord] = []
    for family in FAMILIES:
        for variant in VARIANTS[family]:
            for t_idx, width in enumerate(widths):
                mask = _shape_mask(variant, size, width)
                for color_name, rgb in COLORS.items():
                    pixels = np.full((size, size, 3), 255, dtype=np.uint8)
                    pixels[mask] = rgb
                    records.append(ImageRecord(
                        id=f"{variant}-{color_name}-w{t_idx}",
                        pixels=pixels,
                        attributes=Attributes(family, variant, color_name, t_idx),
                    ))
    records.sort(key=lambda r: r.id)
    rng = np.random.default_rng(seed)
    ids = [r.id for r in records]
    test_count = len(records) // 9  # 15 of 135
    test_idx = set(rng.choice(len(ids), size=test_count, replace=False).tolist())
    manifest = DatasetManifest(
        name="simple-shapes",
        image_shape=(size, size, 3),
        count=len(records),
        train_ids=[i for j, i in enumerate(ids) if j not in test_idx],
        test_ids=[i for j, i in enumerate(ids) if j in test_idx],
        seed=seed,
        vocabularies={
            "families": list(FAMILIES),
            "variants": {f: list(v) for f, v in VARIANTS.items()},
            "colors": list(COLORS),
            "thicknesses": list(range(len(widths))),
        },
    )
    return manifest, records


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def parse_idx_images(data: bytes) -> np.ndarray:
    if len(data) < 16:
        raise IdxTruncationError("image header needs 16 bytes")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(f"bad image magic 0x{magic:08x}")
    expected = 16 + count * rows * cols
    if len(data) != expected:
        raise IdxTruncationError(f"image payload is {len(data)} bytes, header declares {expected}")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows, cols)


def parse_idx_labels(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise IdxTruncationError("label header needs 8 bytes")
    magic, count = struct.unpack(">II", data[:8])
    if magic != LABEL_MAGIC:
        raise IdxFormatError(f"bad label magic 0x{magic:08x}")
    if len(data) != 8 + count:
        raise IdxTruncationError(f"label payload is {len(data)} bytes, header declares {8 + count}")
    return np.frombuffer(data, dtype=np.uint8, offset=8)


def serialize_idx_images(images: np.ndarray) -> bytes:
    count, rows, cols = images.shape
    return struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols) + images.astype(np.uint8).tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    return struct.pack(">II", LABEL_MAGIC, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()


def ingest_idx(images_path, labels_path, name: str = "idx") -> tuple[DatasetManifest, list[ImageRecord]]:
    """Parse paired IDX image/label files (optionally gzipped) into records."""
    images = parse_idx_images(_read_maybe_gzip(images_path))
    labels = parse_idx_labels(_read_maybe_gzip(labels_path))
    if len(images) != len(labels):
        raise IdxConsistencyError(f"{len(images)} images but {len(labels)} labels")
    count, rows, cols = images.shape
    digits = max(5, len(str(max(count - 1, 1))))
    records = [
        ImageRecord(
            id=f"{name}-{i:0{digits}d}",
            pixels=images[i][:, :, None].copy(),
            label=int(labels[i]),
        )
        for i in range(count)
    ]
    manifest = DatasetManifest(
        name=name,
        image_shape=(rows, cols, 1),
        count=count,
        train_ids=[r.id for r in records],
        vocabularies={"labels": sorted({int(l) for l in labels})},
    )
    return manifest, records


def subsample(records: list[ImageRecord], per_label: int, seed: int) -> list[ImageRecord]:
    """Seeded uniform pick of up to per_label records per label, ordered by id."""
    if per_label < 1:
        raise InputError("per_label must be positive")
    by_label: dict[object, list[ImageRecord]] = {}
    for r in sorted(records, key=lambda r: r.id):
        by_label.setdefault(r.label, []).append(r)
    rng = np.random.default_rng(seed)
    chosen: list[ImageRecord] = []
    for label in sorted(by_label, key=str):
        group = by_label[label]
        if len(group) <= per_label:
            chosen.extend(group)
        else:
            idx = rng.choice(len(group), size=per_label, replace=False)
            chosen.extend(group[i] for i in idx)
    chosen.sort(key=lambda r: r.id)
    return chosen


def save_dataset(directory, manifest: DatasetManifest, records: list[ImageRecord]) -> None:
    """manifest.json + images/<id>.png + attributes.csv layout."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2))
    with open(directory / "attributes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "family", "variant", "color", "thickness", "label"])
        for r in records:
            a = r.attributes
            writer.writerow([
                r.id,
                a.family if a else "",
                a.variant if a else "",
                a.color if a else "",
                "" if a is None else a.thickness,
                "" if r.label is None else r.label,
            ])
    for r in records:
        img = Image.fromarray(r.pixels if r.pixels.shape[2] > 1 else r.pixels[:, :, 0])
        img.save(directory / "images" / f"{r.id}.png")


def load_dataset(directory) -> tuple[DatasetManifest, list[ImageRecord]]:
    directory = Path(directory)
    manifest = DatasetManifest.from_json(json.loads((directory / "manifest.json").read_text()))
    attrs: dict[str, tuple[Attributes | None, int | None]] = {}
    with open(directory / "attributes.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            attributes = None
            if row["family"]:
                attributes = Attributes(row["family"], row["variant"], row["color"], int(row["thickness"]))
            label = int(row["label"]) if row["label"] else None
            attrs[row["id"]] = (attributes, label)
    records = []
    for image_id, (attributes, label) in sorted(attrs.items()):
        pixels = np.asarray(Image.open(directory / "images" / f"{image_id}.png"))
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        records.append(ImageRecord(id=image_id, pixels=pixels, attributes=attributes, label=label))
    return manifest, records
