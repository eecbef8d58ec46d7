"""Detection scoring: IoU matching, AP/mAP, best-F1 threshold and count error.

Detections are matched greedily in descending confidence (ties keep input
order) to the unmatched ground truth of the same class and image with the
highest IoU, provided it reaches the IoU threshold.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import BoundingBox, _parse_fields, parse_labels
from .errors import LabelParseError, UndefinedMetricError, ValidationError


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if not 0 <= self.confidence <= 1:
            raise ValidationError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def class_id(self):
        return self.box.class_id


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    threshold_search: str = "unique_confidences"
    per_class_count_error: bool = False

    def __post_init__(self):
        if not 0 < self.iou_threshold < 1:
            raise ValidationError("iou_threshold must lie in (0, 1)")
        if self.threshold_search != "unique_confidences":
            raise ValidationError(f"unsupported threshold search {self.threshold_search!r}")


@dataclass
class MetricsReport:
    per_class_ap: dict
    map: float
    precision: float
    recall: float
    f1: float
    best_threshold: float
    count_error: float
    per_class_count_error: Optional[dict] = None
    n_images: int = 0

    def to_dict(self):
        d = asdict(self)
        if d["per_class_count_error"] is None:
            del d["per_class_count_error"]
        return d


def iou(a: BoundingBox, b: BoundingBox) -> float:
    if (a.cx, a.cy, a.w, a.h) == (b.cx, b.cy, b.w, b.h):
        return 1.0  # edge arithmetic can land one ulp either side
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def _confidence_order(dets):
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def match_detections(dets: Sequence[Detection], gts: Sequence[BoundingBox],
                     cfg: EvalConfig = EvalConfig()) -> list[bool]:
    """TP/FP flag per detection (in input order) for one image and class."""
    flags = [False] * len(dets)
    taken = [False] * len(gts)
    for i in _confidence_order(dets):
        best, best_iou = -1, cfg.iou_threshold
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(dets[i].box, gt)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
            flags[i] = True
    return flags


def _as_images(x):
    if isinstance(x, Mapping):
        return x
    return {0: list(x)}


def _pooled(dets_by_image, gts_by_image, cfg, by_class=True):
    """Match every (image, class) group; returns pooled (confidence, flag, class) rows
    in deterministic image/input order, and ground-truth counts per class."""
    dets_by_image = _as_images(dets_by_image)
    gts_by_image = _as_images(gts_by_image)
    images = sorted(set(dets_by_image) | set(gts_by_image), key=str)
    rows = []
    n_gt = {}
    for img in images:
        dets = list(dets_by_image.get(img, ()))
        gts = list(gts_by_image.get(img, ()))
        classes = sorted({d.class_id for d in dets} | {g.class_id for g in gts}) if by_class else [None]
        for c in classes:
            dsel = [d for d in dets if c is None or d.class_id == c]
            gsel = [g for g in gts if c is None or g.class_id == c]
            n_gt[c] = n_gt.get(c, 0) + len(gsel)
            for d, f in zip(dsel, match_detections(dsel, gsel, cfg)):
                rows.append((d.confidence, f, d.class_id))
    return rows, n_gt


def ap_from_flags(confidences, flags, n_gt: int) -> float:
    """All-point interpolated AP of a ranked list of TP/FP flags."""
    if n_gt <= 0:
        raise UndefinedMetricError("AP is undefined without ground truth")
    if len(flags) == 0:
        return 0.0
    conf = np.asarray(confidences, dtype=np.float64)
    order = np.argsort(-conf, kind="stable")
    tp = np.asarray(flags, dtype=bool)[order]
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[tp].sum() / n_gt)


def average_precision(dets, gts, cfg: EvalConfig = EvalConfig()) -> float:
    """AP for one class. ``dets``/``gts`` are lists for a single image or
    mappings ``image -> list`` pooled across images."""
    rows, n_gt = _pooled(dets, gts, cfg, by_class=False)
    return ap_from_flags([r[0] for r in rows], [r[1] for r in rows], n_gt.get(None, 0))


def _best_f1(confidences, flags, n_gt):
    conf = np.asarray(confidences, dtype=np.float64)
    tp = np.asarray(flags, dtype=bool)
    if conf.size == 0:
        return 0.0, 0.0, 0.0, 0.0
    thresholds = np.unique(np.append(conf, 0.0))[::-1]
    best = None
    for t in thresholds:
        kept = conf >= t
        n_kept = int(kept.sum())
        n_tp = int(tp[kept].sum())
        p = n_tp / n_kept if n_kept else 0.0
        r = n_tp / n_gt if n_gt else 0.0
        # 2PR/(P+R) as one rational so equal scores compare bit-equal
        f1 = 2 * n_tp / (n_kept + n_gt) if n_tp else 0.0
        # strict '>' keeps the higher threshold on ties
        if best is None or f1 > best[0]:
            best = (f1, p, r, float(t))
    return best


def f1_best_threshold(dets, gts, cfg: EvalConfig = EvalConfig()):
    """``(f1, precision, recall, threshold)`` maximising F1 over all classes pooled.

    Candidate thresholds are every distinct confidence plus 0; a detection is
    kept when its confidence is >= the threshold.
    """
    rows, n_gt = _pooled(dets, gts, cfg)
    return _best_f1([r[0] for r in rows], [r[1] for r in rows], sum(n_gt.values()))


def count_error(detection_counts: Sequence[int], label_counts: Sequence[int]) -> float:
    """Mean absolute per-image difference between detection and label counts."""
    if len(detection_counts) != len(label_counts):
        raise ValidationError("detection and label counts cover different image sets")
    n = len(label_counts)
    if n == 0:
        raise UndefinedMetricError("count error needs at least one image")
    return sum(abs(d - l) for d, l in zip(detection_counts, label_counts)) / n


def counts_above(dets_by_image, images, threshold, class_id=None):
    return [
        sum(1 for d in dets_by_image.get(img, ()) if d.confidence >= threshold
            and (class_id is None or d.class_id == class_id))
        for img in images
    ]


def evaluate(dets_by_image: Mapping, gts_by_image: Mapping, cfg: EvalConfig = EvalConfig(),
             class_names: Optional[Sequence[str]] = None) -> MetricsReport:
    """Score pooled predictions against ground truth over an image set.

    Per-class AP is reported for classes with at least one ground-truth box
    (keyed by name when ``class_names`` is given); mAP is their mean. F1,
    precision and recall are taken at the F1-maximising threshold, which is
    also the threshold applied for the count error.
    """
    images = sorted(set(dets_by_image) | set(gts_by_image), key=str)
    rows, n_gt = _pooled(dets_by_image, gts_by_image, cfg)

    def key(c):
        return class_names[c] if class_names is not None and c < len(class_names) else c

    per_class = {}
    for c in sorted(k for k, v in n_gt.items() if v > 0):
        sel = [r for r in rows if r[2] == c]
        per_class[key(c)] = ap_from_flags([r[0] for r in sel], [r[1] for r in sel], n_gt[c])
    mean_ap = float(np.mean(list(per_class.values()))) if per_class else 0.0

    f1, p, r, thr = _best_f1([x[0] for x in rows], [x[1] for x in rows], sum(n_gt.values()))
    labels = [len(gts_by_image.get(img, ())) for img in images]
    ce = count_error(counts_above(dets_by_image, images, thr), labels) if images else 0.0
    per_class_ce = None
    if cfg.per_class_count_error and images:
        per_class_ce = {}
        for c in sorted(n_gt):
            lc = [sum(1 for g in gts_by_image.get(img, ()) if g.class_id == c) for img in images]
            per_class_ce[key(c)] = count_error(counts_above(dets_by_image, images, thr, c), lc)
    return MetricsReport(per_class, mean_ap, p, r, f1, thr, ce, per_class_ce, len(images))


def parse_predictions(text: str) -> list[Detection]:
    """Parse ``class cx cy w h conf`` lines."""
    out = []
    for lineno, cls, (cx, cy, w, h, conf) in _parse_fields(text, 6, "prediction"):
        try:
            out.append(Detection(BoundingBox(cls, cx, cy, w, h), conf))
        except ValidationError as exc:
            raise LabelParseError(str(exc), lineno) from None
    return out


def format_predictions(dets: Sequence[Detection]) -> str:
    return "".join(
        f"{d.box.class_id} {d.box.cx:.6f} {d.box.cy:.6f} {d.box.w:.6f} {d.box.h:.6f} {d.confidence:.6f}\n"
        for d in dets
    )


def load_directory(pred_dir, gt_dir):
    """Read ``*.txt`` predictions and labels keyed by file stem.

    The image set is the ground-truth label files; a missing prediction file
    counts as no detections. Returns ``(dets, gts, errors)`` where ``errors``
    collects per-file parse failures instead of aborting.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gts, dets, errors = {}, {}, []
    for path in sorted(gt_dir.glob("*.txt")):
        try:
            gts[path.stem] = parse_labels(path.read_text())
        except LabelParseError as exc:
            errors.append({"file": str(path), "error": str(exc)})
    for stem in gts:
        path = pred_dir / f"{stem}.txt"
        if not path.exists():
            dets[stem] = []
            continue
        try:
            dets[stem] = parse_predictions(path.read_text())
        except LabelParseError as exc:
            errors.append({"file": str(path), "error": str(exc)})
            dets[stem] = []
    return dets, gts, errors

