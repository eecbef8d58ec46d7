"""Normalised-centre box labels, dataset splits and manifests.

Label files hold one box per line, ``class cx cy w h`` in image fractions;
prediction files append a confidence column.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyDatasetError, LabelParseError, ValidationError

DEFAULT_CLASSES = ("cow", "sheep", "dog")
SPLITS = ("train", "val", "test")
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class BoundingBox:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise ValidationError(f"class id must be a non-negative integer, got {self.class_id}")
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"box width and height must be positive, got {self.w}, {self.h}")
        for lo, hi, axis in ((self.x0, self.x1, "x"), (self.y0, self.y1, "y")):
            if lo < -_EDGE_TOL or hi > 1 + _EDGE_TOL:
                raise ValidationError(f"box extends outside the image along {axis}: [{lo:.6g}, {hi:.6g}]")

    @property
    def x0(self):
        return self.cx - self.w / 2

    @property
    def x1(self):
        return self.cx + self.w / 2

    @property
    def y0(self):
        return self.cy - self.h / 2

    @property
    def y1(self):
        return self.cy + self.h / 2

    @property
    def area(self):
        return self.w * self.h


@dataclass(frozen=True)
class ClassList:
    names: tuple = DEFAULT_CLASSES

    def __post_init__(self):
        names = tuple(self.names)
        if not names or any(not n for n in names):
            raise ValidationError("class names must be non-empty")
        if len(set(names)) != len(names):
            raise ValidationError("class names must be unique")
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.names)

    def __getitem__(self, i):
        return self.names[i]


def _parse_fields(text, n_fields, what):
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != n_fields:
            raise LabelParseError(f"expected {n_fields} fields for a {what}, got {len(parts)}", lineno)
        try:
            cls = float(parts[0])
            nums = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise LabelParseError(f"non-numeric field ({exc})", lineno) from None
        if cls != int(cls):
            raise LabelParseError(f"class id {parts[0]!r} is not an integer", lineno)
        rows.append((lineno, int(cls), nums))
    return rows


def parse_labels(text: str) -> list[BoundingBox]:
    """Parse ``class cx cy w h`` lines; blank lines are skipped, order kept."""
    boxes = []
    for lineno, cls, (cx, cy, w, h) in _parse_fields(text, 5, "label"):
        try:
            boxes.append(BoundingBox(cls, cx, cy, w, h))
        except ValidationError as exc:
            raise LabelParseError(str(exc), lineno) from None
    return boxes


def format_labels(boxes: Iterable[BoundingBox]) -> str:
    return "".join(f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n" for b in boxes)


def read_labels(path) -> list[BoundingBox]:
    path = Path(path)
    return parse_labels(path.read_text()) if path.exists() else []


def write_labels(boxes, path) -> None:
    Path(path).write_text(format_labels(boxes))


def _clamp_box(cls, x0, y0, x1, y1):
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, 1.0), min(y1, 1.0)
    return BoundingBox(cls, (x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


def transform_labels(boxes: Sequence[BoundingBox], src_dims, dst_dims) -> list[BoundingBox]:
    """Carry normalised boxes from a ``src_dims`` image to a ``dst_dims`` image.

    Dimensions are ``(width, height)``. Under a uniform rescale normalised
    coordinates do not change. If the aspect ratio changes by more than one
    rounding pixel, sizes are multiplied by the per-axis ratio ``src/dst``
    (centres kept) and the box is clamped back into the frame.
    """
    sw, sh = src_dims
    dw, dh = dst_dims
    if not boxes:
        return []
    if abs(sh * dw / sw - dh) <= 1.0:
        return list(boxes)
    kx, ky = sw / dw, sh / dh
    out = []
    for b in boxes:
        w, h = b.w * kx, b.h * ky
        out.append(_clamp_box(b.class_id, b.cx - w / 2, b.cy - h / 2, b.cx + w / 2, b.cy + h / 2))
    return out


@dataclass(frozen=True)
class Record:
    image: str
    label: str
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")


@dataclass
class DatasetManifest:
    records: list
    class_list: ClassList = field(default_factory=ClassList)
    seed: int = 0

    def split(self, name) -> list:
        return [r for r in self.records if r.split == name]

    def counts(self) -> dict:
        return {s: len(self.split(s)) for s in SPLITS}

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "classes": list(self.class_list.names),
                "records": [{"image": r.image, "label": r.label, "split": r.split} for r in self.records],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        records = [Record(r["image"], r["label"], r["split"]) for r in data["records"]]
        return cls(records, ClassList(tuple(data.get("classes", DEFAULT_CLASSES))), int(data.get("seed", 0)))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def _normalise_fractions(fractions):
    if isinstance(fractions, dict):
        unknown = set(fractions) - set(SPLITS)
        if unknown:
            raise ValidationError(f"unknown split names {sorted(unknown)}")
        fr = {s: float(fractions.get(s, 0.0)) for s in SPLITS}
    else:
        vals = [float(f) for f in fractions]
        if len(vals) != 3:
            raise ValidationError("fractions need three values: train, val, test")
        fr = dict(zip(SPLITS, vals))
    if any(v < 0 for v in fr.values()):
        raise ValidationError("split fractions must be non-negative")
    if abs(sum(fr.values()) - 1.0) > 1e-9:
        raise ValidationError(f"split fractions must sum to 1, got {sum(fr.values()):.6g}")
    return fr


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_dataset(records, fractions, seed: int, class_list: ClassList | None = None) -> DatasetManifest:
    """Shuffle ``(image, label)`` pairs with ``seed`` and cut them into splits.

    ``fractions`` is ``(train, val, test)`` or a dict keyed by split name.
    Val and test get ``round(fraction * N)`` records; train takes the rest.
    """
    pairs = [(str(img), str(lbl)) for img, lbl in records]
    if not pairs:
        raise EmptyDatasetError("cannot split an empty dataset")
    fr = _normalise_fractions(fractions)
    n = len(pairs)
    n_val = _round_half_up(fr["val"] * n)
    n_test = _round_half_up(fr["test"] * n)
    if n_val + n_test > n:
        raise ValidationError("rounded val/test counts exceed the dataset size")
    order = sorted(pairs)
    random.Random(seed).shuffle(order)
    out = []
    for i, (img, lbl) in enumerate(order):
        split = "val" if i < n_val else "test" if i < n_val + n_test else "train"
        out.append(Record(img, lbl, split))
    return DatasetManifest(out, class_list or ClassList(), seed)


def scan_dataset(root) -> list[tuple[str, str]]:
    """``(image, label)`` relative paths for ``images/*.png`` under ``root``.

    Missing label files are created empty so every image has one.
    """
    root = Path(root)
    images = sorted((root / "images").glob("*.png"))
    labels_dir = root / "labels"
    labels_dir.mkdir(exist_ok=True)
    pairs = []
    for img in images:
        lbl = labels_dir / (img.stem + ".txt")
        if not lbl.exists():
            lbl.touch()
        pairs.append((str(img.relative_to(root)), str(lbl.relative_to(root))))
    return pairs
