"""Experiment grid: degrade a dataset per (GSD, Q, aperture) condition, score
external predictions, and write results tables and gnuplot series.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Optional

from . import dataset as ds
from . import metrics as mt
from .errors import UsageError, ValidationError
from .optics import CASSEGRAIN, CIRCULAR, ApertureSpec
from .resample import DegradeSpec, degrade, read_image, sidecar_path, write_image

log = logging.getLogger(__name__)

DEFAULT_GSDS = (0.05, 0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 1.00, 1.50, 2.00, 2.50, 3.00)
DEFAULT_QS = (0.5, 1.0, 1.5)
CSV_HEADER = ("gsd", "q", "aperture", "input_size", "f1", "count_error",
              "precision", "recall", "map", "ap_cow", "ap_sheep", "ap_dog")
PLOT_METRICS = CSV_HEADER[4:]
FIXTURES = {
    "circular_640": "table1_circular_640.csv",
    "circular_1280": "table2_circular_1280.csv",
    "cassegrain_640": "table3_cassegrain_640.csv",
    "cassegrain_1280": "table4_cassegrain_1280.csv",
}


def _default_apertures():
    return [ApertureSpec.circular(), ApertureSpec.cassegrain()]


@dataclass
class SweepConfig:
    gsd_targets: list = field(default_factory=lambda: list(DEFAULT_GSDS))
    q_values: list = field(default_factory=lambda: list(DEFAULT_QS))
    apertures: list = field(default_factory=_default_apertures)
    input_sizes: list = field(default_factory=lambda: [640, 1280])
    source_gsd: Optional[float] = None
    iou_threshold: float = 0.5
    split: str = "test"
    predictions_root: Optional[str] = None

    def __post_init__(self):
        for name in ("gsd_targets", "q_values", "apertures", "input_sizes"):
            if not getattr(self, name):
                raise ValidationError(f"{name} must not be empty")
        g = list(self.gsd_targets)
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValidationError("gsd_targets must be strictly increasing")
        names = [a.name for a in self.apertures]
        if len(set(names)) != len(names):
            raise ValidationError("aperture kinds must be distinct within one sweep")

    def conditions(self):
        for g in self.gsd_targets:
            for q in self.q_values:
                for ap in self.apertures:
                    yield g, q, ap

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown sweep config keys: {sorted(unknown)}")
        if "apertures" in data:
            data["apertures"] = [_aperture_from_json(a) for a in data["apertures"]]
        return cls(**data)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _aperture_from_json(item):
    if isinstance(item, str):
        return ApertureSpec.circular() if item == CIRCULAR else ApertureSpec.cassegrain() if item == CASSEGRAIN \
            else ApertureSpec(kind=item)
    return ApertureSpec(**item)


def condition_name(gsd, q, aperture) -> str:
    name = aperture.name if isinstance(aperture, ApertureSpec) else str(aperture)
    return f"g{float(gsd)}_q{float(q)}_{name}"


@dataclass
class ResultRow:
    gsd: float
    q: float
    aperture: str
    input_size: int
    f1: float
    count_error: float
    precision: float
    recall: float
    map: float
    ap_cow: float
    ap_sheep: float
    ap_dog: float

    def sort_key(self):
        return (self.gsd, self.q, self.aperture, self.input_size)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, int):
        return str(x)
    if math.isnan(x):
        return "nan"
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def emit_csv(rows) -> str:
    if not rows:
        raise UsageError("no result rows to emit")
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(getattr(r, c)) for c in CSV_HEADER) + "\n")
    return buf.getvalue()


def parse_csv(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ValidationError(f"results CSV header must be {','.join(CSV_HEADER)}")
    rows = []
    for n, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(CSV_HEADER):
            raise ValidationError(f"results CSV line {n}: expected {len(CSV_HEADER)} fields")
        vals = dict(zip(CSV_HEADER, rec))
        rows.append(ResultRow(
            gsd=float(vals["gsd"]), q=float(vals["q"]), aperture=vals["aperture"],
            input_size=int(vals["input_size"]),
            **{k: float(vals[k]) for k in CSV_HEADER[4:]},
        ))
    return rows


def load_fixture(name: str = "circular_640") -> str:
    """Text of a shipped results table transcribed from the reference study."""
    try:
        fname = FIXTURES[name]
    except KeyError:
        raise UsageError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    return resources.files("optigrade").joinpath("data", fname).read_text()


def emit_plot_data(rows, metric: str) -> str:
    """gnuplot data: one block per (q, aperture, input_size), ``gsd value`` lines.

    Blocks are separated by two blank lines so ``index N`` selects a series.
    """
    if metric not in PLOT_METRICS:
        raise UsageError(f"unknown metric {metric!r}; choose from {', '.join(PLOT_METRICS)}")
    if not rows:
        raise UsageError("no result rows to plot")
    series = {}
    for r in sorted(rows, key=ResultRow.sort_key):
        series.setdefault((r.q, r.aperture, r.input_size), []).append(r)
    blocks = []
    for (q, ap, size), members in sorted(series.items()):
        lines = [f"# q={_fmt(q)} aperture={ap} input_size={size}", f"# gsd {metric}"]
        lines += [f"{_fmt(r.gsd)} {_fmt(getattr(r, metric))}" for r in members]
        blocks.append("\n".join(lines) + "\n")
    return "\n\n".join(blocks)


def _output_valid(path: Path, target_gsd: float, dims) -> bool:
    meta = sidecar_path(path)
    if not (path.exists() and meta.exists()):
        return False
    try:
        from PIL import Image as PILImage

        gsd = float(json.loads(meta.read_text())["gsd_m_per_px"])
        with PILImage.open(path) as im:
            size = im.size
    except Exception:  # unreadable partial output is recomputed
        return False
    return math.isclose(gsd, target_gsd, rel_tol=1e-9) and size == tuple(dims)


def _degrade_condition(manifest, dataset_root, out_root, gsd, q, aperture, source_gsd):
    name = condition_name(gsd, q, aperture)
    cdir = out_root / name
    (cdir / "images").mkdir(parents=True, exist_ok=True)
    (cdir / "labels").mkdir(parents=True, exist_ok=True)
    stats = {"condition": name, "computed": 0, "reused": 0, "skipped": [], "errors": []}
    t0 = time.perf_counter()
    for rec in manifest.records:
        src_path = dataset_root / rec.image
        out_img = cdir / rec.image
        out_lbl = cdir / rec.label
        out_img.parent.mkdir(parents=True, exist_ok=True)
        out_lbl.parent.mkdir(parents=True, exist_ok=True)
        try:
            image = read_image(src_path, gsd=None)
            src = image.gsd if image.gsd is not None else source_gsd
            if src is None:
                raise ValidationError(f"{rec.image}: no source GSD (sidecar or config)")
            if gsd <= src:
                stats["skipped"].append({"image": rec.image, "reason": f"target GSD {gsd} <= source GSD {src}"})
                continue
            spec = DegradeSpec(src, gsd, q, aperture)
            dims = (round(image.width / spec.phi), round(image.height / spec.phi))
            if not (_output_valid(out_img, gsd, dims) and out_lbl.exists()):
                write_image(degrade(image, spec, source_gsd=src), out_img)
                boxes = ds.read_labels(dataset_root / rec.label)
                ds.write_labels(ds.transform_labels(boxes, (image.width, image.height), dims), out_lbl)
                stats["computed"] += 1
            else:
                stats["reused"] += 1
        except (ValidationError, OSError) as exc:
            stats["errors"].append({"image": rec.image, "error": str(exc)})
    manifest.save(cdir / "manifest.json")
    if stats["skipped"] and not stats["computed"] and not stats["reused"]:
        log.warning("condition %s skipped: target GSD does not exceed source GSD", name)
    stats["seconds"] = time.perf_counter() - t0
    return stats


def run_degradation_sweep(manifest, cfg: SweepConfig, dataset_root, out_root, threads: int = 1) -> dict:
    """Write one degraded copy of the dataset per condition under ``out_root``.

    Outputs that already exist with the right GSD sidecar and dimensions are
    reused, so an interrupted sweep can be rerun. Returns a report with
    per-condition counts of computed, reused and skipped images.
    """
    dataset_root, out_root = Path(dataset_root), Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    conds = list(cfg.conditions())

    def work(c):
        return _degrade_condition(manifest, dataset_root, out_root, *c, cfg.source_gsd)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, conds))
    else:
        results = [work(c) for c in conds]
    return {
        "conditions": results,
        "computed": sum(r["computed"] for r in results),
        "reused": sum(r["reused"] for r in results),
    }


def _split_stems(cdir: Path, split: Optional[str]):
    mpath = cdir / "manifest.json"
    if split is None or not mpath.exists():
        return None
    recs = ds.DatasetManifest.load(mpath).split(split)
    return {Path(r.label).stem for r in recs} or None


def _evaluate_condition(predictions_root, ground_truth_root, cfg, gsd, q, aperture, size, ecfg):
    name = condition_name(gsd, q, aperture)
    pred_dir = predictions_root / f"{name}_{size}"
    gt_dir = ground_truth_root / name
    if not pred_dir.is_dir() or not (gt_dir / "labels").is_dir():
        return None, {"condition": f"{name}_{size}", "reason": "missing predictions or ground truth"}
    dets, gts, errors = mt.load_directory(pred_dir, gt_dir / "labels")
    keep = _split_stems(gt_dir, cfg.split)
    if keep is not None:
        dets = {k: v for k, v in dets.items() if k in keep}
        gts = {k: v for k, v in gts.items() if k in keep}
    classes = ds.ClassList()
    mpath = gt_dir / "manifest.json"
    if mpath.exists():
        classes = ds.DatasetManifest.load(mpath).class_list
    if not gts:
        return None, {"condition": f"{name}_{size}", "reason": "no ground-truth images"}
    rep = mt.evaluate(dets, gts, ecfg, classes.names)
    ap = rep.per_class_ap
    row = ResultRow(
        gsd=float(gsd), q=float(q), aperture=aperture.name, input_size=int(size),
        f1=rep.f1, count_error=rep.count_error, precision=rep.precision, recall=rep.recall,
        map=rep.map, ap_cow=ap.get("cow", math.nan), ap_sheep=ap.get("sheep", math.nan),
        ap_dog=ap.get("dog", math.nan),
    )
    return row, errors


def evaluate_sweep(predictions_root, ground_truth_root, cfg: SweepConfig, threads: int = 1):
    """Score every condition that has a prediction directory.

    Predictions for condition ``g{gsd}_q{q}_{aperture}`` at detector input
    size ``S`` live in ``predictions_root/g{gsd}_q{q}_{aperture}_{S}/``;
    ground truth is the degraded tree written by :func:`run_degradation_sweep`.
    Returns ``(rows, report)``; rows are sorted by (gsd, q, aperture,
    input_size) and the report lists missing conditions and bad files.
    """
    predictions_root, ground_truth_root = Path(predictions_root), Path(ground_truth_root)
    ecfg = mt.EvalConfig(iou_threshold=cfg.iou_threshold)
    tasks = [(g, q, ap, s) for g, q, ap in cfg.conditions() for s in cfg.input_sizes]

    def work(t):
        return _evaluate_condition(predictions_root, ground_truth_root, cfg, *t, ecfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]
    rows, missing, errors = [], [], []
    for row, extra in results:
        if row is None:
            missing.append(extra)
        else:
            rows.append(row)
            errors.extend(extra)
    rows.sort(key=ResultRow.sort_key)
    return rows, {"missing": missing, "errors": errors}


def write_run(out_dir, rows, report, timestamp: Optional[str] = None) -> Path:
    """Lay out ``runs/<timestamp>/`` with results.csv, plots/*.dat and run_report.json."""
    stamp = timestamp or datetime.now().strftime("%Y%m%dT%H%M%S")
    run_dir = Path(out_dir) / "runs" / stamp
    (run_dir / "plots").mkdir(parents=True, exist_ok=True)
    if rows:
        (run_dir / "results.csv").write_text(emit_csv(rows))
        for metric in PLOT_METRICS:
            (run_dir / "plots" / f"{metric}.dat").write_text(emit_plot_data(rows, metric))
    (run_dir / "run_report.json").write_text(json.dumps(report, indent=2, default=str))
    return run_dir


def rows_to_dicts(rows):
    return [asdict(r) for r in rows]
