"""Command-line entry point: ``optigrade {psf,degrade,split,eval,sweep,plot}``.

Exit status is 0 on success, 1 on validation or usage errors and 2 on I/O
errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import dataset as ds
from . import metrics as mt
from . import optics
from . import sweep as sw
from .errors import ValidationError
from .resample import DegradeSpec, degrade, read_image, write_image

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
THREADS_ENV = "OPTIGRADE_THREADS"


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageExit(message)


def _aperture_args(p):
    p.add_argument("--aperture", choices=[optics.CIRCULAR, optics.CASSEGRAIN], default=optics.CIRCULAR)
    p.add_argument("--diameter", type=float, default=0.1, help="aperture diameter in meters")
    p.add_argument("--obscuration", type=float, default=0.3, help="central obscuration, fraction of diameter")
    p.add_argument("--spiders", type=int, default=4, help="number of spider vanes")
    p.add_argument("--spider-width", type=float, default=0.02, help="vane width, fraction of diameter")


def _aperture(args):
    if args.aperture == optics.CIRCULAR:
        return optics.ApertureSpec.circular(args.diameter)
    return optics.ApertureSpec.cassegrain(args.diameter, args.obscuration, args.spiders, args.spider_width)


def build_parser():
    parser = _Parser(prog="optigrade", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker cap (falls back to ${THREADS_ENV}, then 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("psf", help="write a PSF kernel matrix and preview image")
    _aperture_args(p)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--size", type=int, default=optics.DEFAULT_KERNEL_SIZE, help="odd kernel side")
    p.add_argument("--out", required=True, help="kernel text file; preview goes next to it as .png")

    p = sub.add_parser("degrade", help="degrade one image to a coarser GSD")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--src-gsd", type=float, required=True)
    p.add_argument("--target-gsd", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    _aperture_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("split", help="split images/ + labels/ into train/val/test")
    p.add_argument("--dir", required=True)
    p.add_argument("--fractions", required=True, help="train,val,test fractions summing to 1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", default=",".join(ds.DEFAULT_CLASSES))

    p = sub.add_parser("eval", help="score a prediction directory against labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--per-class-ce", action="store_true", help="also report per-class count error")

    p = sub.add_parser("sweep", help="degrade a dataset over the condition grid")
    p.add_argument("--config", required=True, help="sweep configuration JSON")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot", help="emit gnuplot series from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--metric", required=True, choices=list(sw.PLOT_METRICS))
    p.add_argument("--out", required=True)
    return parser


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def _require_file(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")


def _require_dir(path):
    if not Path(path).is_dir():
        raise FileNotFoundError(f"no such directory: {path}")


def cmd_psf(args):
    kernel = optics.kernel_for_condition(_aperture(args), args.q, args.size)
    out = Path(args.out)
    optics.write_kernel_text(kernel, out)
    preview = out.with_suffix(".png") if out.suffix != ".png" else out.with_name(out.stem + "_preview.png")
    optics.write_kernel_preview(kernel, preview)
    print(f"wrote {out} ({kernel.size}x{kernel.size}, q={kernel.q:g}) and {preview}")


def cmd_degrade(args):
    if not args.target_gsd > args.src_gsd:
        raise ValidationError("target GSD must exceed source GSD")
    _require_file(args.input)
    spec = DegradeSpec(args.src_gsd, args.target_gsd, args.q, _aperture(args))
    image = read_image(args.input, gsd=args.src_gsd)
    out = degrade(image, spec)
    write_image(out, args.out)
    print(f"wrote {args.out} ({out.width}x{out.height} at {out.gsd:g} m/px)")


def cmd_split(args):
    _require_dir(args.dir)
    try:
        fractions = [float(x) for x in args.fractions.split(",")]
    except ValueError:
        raise ValidationError(f"bad --fractions {args.fractions!r}") from None
    pairs = ds.scan_dataset(args.dir)
    classes = ds.ClassList(tuple(c.strip() for c in args.classes.split(",")))
    manifest = ds.split_dataset(pairs, fractions, args.seed, classes)
    manifest.save(Path(args.dir) / "manifest.json")
    print(json.dumps(manifest.counts()))


def cmd_eval(args):
    _require_dir(args.pred)
    _require_dir(args.gt)
    gt_dir = Path(args.gt)
    labels_dir = gt_dir / "labels" if (gt_dir / "labels").is_dir() else gt_dir
    dets, gts, errors = mt.load_directory(args.pred, labels_dir)
    if errors:
        raise ValidationError("; ".join(f"{e['file']}: {e['error']}" for e in errors))
    classes = ds.DEFAULT_CLASSES
    if (gt_dir / "manifest.json").exists():
        classes = ds.DatasetManifest.load(gt_dir / "manifest.json").class_list.names
    cfg = mt.EvalConfig(iou_threshold=args.iou, per_class_count_error=args.per_class_ce)
    report = mt.evaluate(dets, gts, cfg, classes)
    print(json.dumps(report.to_dict(), indent=2))


def cmd_sweep(args):
    _require_file(args.config)
    _require_dir(args.dataset)
    cfg = sw.SweepConfig.load(args.config)
    threads = _threads(args)
    dataset_root = Path(args.dataset)
    mpath = dataset_root / "manifest.json"
    if mpath.exists():
        manifest = ds.DatasetManifest.load(mpath)
    else:
        manifest = ds.split_dataset(ds.scan_dataset(dataset_root), (1.0, 0.0, 0.0), 0)
    out = Path(args.out)
    degraded = out / "degraded"
    report = {"degradation": sw.run_degradation_sweep(manifest, cfg, dataset_root, degraded, threads)}
    rows = []
    if cfg.predictions_root:
        rows, report["evaluation"] = sw.evaluate_sweep(cfg.predictions_root, degraded, cfg, threads)
    run_dir = sw.write_run(out, rows, report)
    print(f"{report['degradation']['computed']} images computed, "
          f"{report['degradation']['reused']} reused; run written to {run_dir}")


def cmd_plot(args):
    _require_file(args.results)
    rows = sw.parse_csv(Path(args.results).read_text())
    Path(args.out).write_text(sw.emit_plot_data(rows, args.metric))
    print(f"wrote {args.out}")


COMMANDS = {
    "psf": cmd_psf, "degrade": cmd_degrade, "split": cmd_split,
    "eval": cmd_eval, "sweep": cmd_sweep, "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit:
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
