import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from conftest import natural_image
from optigrade import cli
from optigrade import dataset as ds
from optigrade import sweep
from optigrade.resample import Image, read_image, write_image

SUBCOMMANDS = ["psf", "degrade", "split", "eval", "sweep", "plot"]


def subparser_flags(name):
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command").choices[name]
    return [opt for a in sub._actions for opt in a.option_strings if opt.startswith("--")]


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_help_lists_every_flag(name, capsys):
    assert cli.main([name, "--help"]) == 0
    out = capsys.readouterr().out
    for flag in subparser_flags(name):
        assert flag in out


def test_top_level_help(capsys):
    assert cli.main(["--help"]) == 0
    out = capsys.readouterr().out
    for name in SUBCOMMANDS + ["--threads"]:
        assert name in out


def test_unknown_flag_is_usage_error(capsys):
    assert cli.main(["psf", "--q", "1", "--out", "k.txt", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--bogus" in err
    assert cli.main([]) == 1


def test_psf_writes_unit_sum_kernel(tmp_path, capsys):
    out = tmp_path / "k.txt"
    assert cli.main(["psf", "--aperture", "circular", "--q", "1.0", "--out", str(out)]) == 0
    k = np.loadtxt(out)
    assert k.shape == (63, 63)
    assert k.sum() == pytest.approx(1.0, abs=1e-9)
    assert (tmp_path / "k.png").exists()


def test_psf_cassegrain_options(tmp_path):
    out = tmp_path / "c.txt"
    args = ["psf", "--aperture", "cassegrain", "--q", "1.5", "--diameter", "0.2", "--obscuration", "0.4",
            "--spiders", "3", "--size", "31", "--out", str(out)]
    assert cli.main(args) == 0
    assert np.loadtxt(out).shape == (31, 31)


def test_psf_invalid_q(tmp_path, capsys):
    assert cli.main(["psf", "--q", "9", "--out", str(tmp_path / "k.txt")]) == 1
    assert "error" in capsys.readouterr().err


def test_degrade(tmp_path, capsys):
    src = tmp_path / "in.png"
    write_image(Image(natural_image(np.random.default_rng(0), 100, 120, 3)), src)
    out = tmp_path / "out.png"
    args = ["degrade", "--in", str(src), "--src-gsd", "0.05", "--target-gsd", "0.25", "--q", "1.0",
            "--aperture", "cassegrain", "--out", str(out)]
    assert cli.main(args) == 0
    img = read_image(out)
    assert (img.width, img.height, img.gsd) == (24, 20, 0.25)


def test_degrade_target_below_source(tmp_path, capsys):
    src = tmp_path / "in.png"
    write_image(Image(np.zeros((50, 50))), src)
    args = ["degrade", "--in", str(src), "--src-gsd", "0.5", "--target-gsd", "0.25", "--q", "1.0",
            "--out", str(tmp_path / "o.png")]
    assert cli.main(args) == 1
    assert "target GSD must exceed source GSD" in capsys.readouterr().err


def test_degrade_missing_input_is_io_error(tmp_path, capsys):
    args = ["degrade", "--in", str(tmp_path / "nope.png"), "--src-gsd", "0.05", "--target-gsd", "0.25",
            "--q", "1.0", "--out", str(tmp_path / "o.png")]
    assert cli.main(args) == 2


def make_dataset(root, n=10):
    (root / "images").mkdir(parents=True)
    (root / "labels").mkdir()
    for i in range(n):
        write_image(Image(np.full((40, 40), 0.5), 0.05), root / "images" / f"im{i:02d}.png")
        ds.write_labels([ds.BoundingBox(i % 3, 0.5, 0.5, 0.2, 0.2)], root / "labels" / f"im{i:02d}.txt")


def test_split(tmp_path, capsys):
    make_dataset(tmp_path)
    assert cli.main(["split", "--dir", str(tmp_path), "--fractions", "0.8,0.1,0.1", "--seed", "4"]) == 0
    assert json.loads(capsys.readouterr().out) == {"train": 8, "val": 1, "test": 1}
    first = (tmp_path / "manifest.json").read_text()
    assert cli.main(["split", "--dir", str(tmp_path), "--fractions", "0.8,0.1,0.1", "--seed", "4"]) == 0
    assert (tmp_path / "manifest.json").read_text() == first
    assert cli.main(["split", "--dir", str(tmp_path), "--fractions", "0.8,0.1"]) == 1
    assert cli.main(["split", "--dir", str(tmp_path), "--fractions", "a,b,c"]) == 1
    assert cli.main(["split", "--dir", str(tmp_path / "missing"), "--fractions", "1,0,0"]) == 2


def test_eval_echoed_labels(tmp_path, capsys):
    make_dataset(tmp_path / "gt")
    (tmp_path / "pred").mkdir()
    for lbl in (tmp_path / "gt" / "labels").glob("*.txt"):
        (tmp_path / "pred" / lbl.name).write_text(lbl.read_text().strip() + " 1.0\n")
    assert cli.main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt"), "--iou", "0.5"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["map"] == 1.0
    assert report["count_error"] == 0.0
    assert set(report["per_class_ap"]) == {"cow", "sheep", "dog"}


def test_eval_bad_prediction_file(tmp_path, capsys):
    make_dataset(tmp_path / "gt", 2)
    (tmp_path / "pred").mkdir()
    (tmp_path / "pred" / "im00.txt").write_text("0 0.5 0.5\n")
    assert cli.main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt")]) == 1
    assert "im00.txt" in capsys.readouterr().err


def test_sweep_and_plot(tmp_path, capsys, monkeypatch):
    make_dataset(tmp_path / "data", 3)
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"gsd_targets": [0.1, 0.2], "q_values": [1.0], "apertures": ["circular"],
                                  "input_sizes": [640], "predictions_root": str(tmp_path / "pred")}))
    for gsd in ("0.1", "0.2"):
        pdir = tmp_path / "pred" / f"g{gsd}_q1.0_circular_640"
        pdir.mkdir(parents=True)
        for i in range(3):
            (pdir / f"im{i:02d}.txt").write_text(f"{i % 3} 0.5 0.5 0.2 0.2 0.9\n")
    monkeypatch.setenv("OPTIGRADE_THREADS", "2")
    out = tmp_path / "out"
    assert cli.main(["sweep", "--config", str(config), "--dataset", str(tmp_path / "data"), "--out", str(out)]) == 0
    (run,) = (out / "runs").iterdir()
    rows = sweep.parse_csv((run / "results.csv").read_text())
    assert [(r.gsd, r.map) for r in rows] == [(0.1, 1.0), (0.2, 1.0)]

    plot = tmp_path / "map.dat"
    assert cli.main(["plot", "--results", str(run / "results.csv"), "--metric", "map", "--out", str(plot)]) == 0
    assert "0.1 1\n0.2 1" in plot.read_text()
    assert cli.main(["plot", "--results", str(run / "results.csv"), "--metric", "nope", "--out", str(plot)]) == 1
    assert cli.main(["plot", "--results", str(tmp_path / "none.csv"), "--metric", "map", "--out", str(plot)]) == 2


def test_threads_env_must_be_integer(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("OPTIGRADE_THREADS", "many")
    make_dataset(tmp_path / "data", 1)
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"gsd_targets": [0.1], "q_values": [1.0], "apertures": ["circular"]}))
    assert cli.main(["sweep", "--config", str(config), "--dataset", str(tmp_path / "data"),
                     "--out", str(tmp_path / "o")]) == 1


def test_console_script_and_module_entry(tmp_path):
    exe = shutil.which("optigrade")
    cmds = [[sys.executable, "-m", "optigrade"]] + ([[exe]] if exe else [])
    for cmd in cmds:
        proc = subprocess.run(cmd + ["psf", "--q", "0.5", "--out", str(tmp_path / "k.txt")],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        proc = subprocess.run(cmd + ["eval", "--nope"], capture_output=True, text=True)
        assert proc.returncode == 1
