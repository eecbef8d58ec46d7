import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from optigrade import metrics as mt
from optigrade import sweep
from optigrade.dataset import BoundingBox
from optigrade.errors import LabelParseError, UndefinedMetricError, ValidationError
from optigrade.metrics import Detection, EvalConfig

from oracles import STAIRCASE_AP


def B(cx, cy, w=0.1, h=0.1, cls=0):
    return BoundingBox(cls, cx, cy, w, h)


def test_iou_examples():
    a = B(0.25, 0.25, 0.5, 0.5)
    b = B(0.5, 0.25, 0.5, 0.5)
    assert mt.iou(a, b) == pytest.approx(1 / 3, abs=1e-12)
    assert mt.iou(a, a) == 1.0
    assert mt.iou(B(0.1, 0.1), B(0.8, 0.8)) == 0.0
    assert mt.iou(B(0.1, 0.1), B(0.2, 0.1)) == 0.0  # touching edges


@st.composite
def boxes(draw):
    w, h = draw(st.floats(0.01, 1.0)), draw(st.floats(0.01, 1.0))
    cx = draw(st.floats(w / 2, 1 - w / 2))
    cy = draw(st.floats(h / 2, 1 - h / 2))
    return BoundingBox(0, cx, cy, w, h)


@settings(max_examples=300, deadline=None)
@given(boxes(), boxes())
def test_iou_properties(a, b):
    v = mt.iou(a, b)
    assert v == mt.iou(b, a)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(oracles.shapely_iou(a, b), abs=1e-9)
    if a == b:
        assert v == 1.0


def test_match_examples():
    g = B(0.5, 0.5)
    assert mt.match_detections([Detection(g, 0.9)], [g]) == [True]
    assert mt.match_detections([Detection(g, 0.9), Detection(g, 0.9)], [g]) == [True, False]
    # the higher-confidence detection wins regardless of input order
    assert mt.match_detections([Detection(g, 0.3), Detection(g, 0.8)], [g]) == [False, True]
    assert mt.match_detections([], [g]) == []
    assert mt.match_detections([Detection(g, 0.5)], []) == [False]


def test_match_prefers_highest_iou_gt():
    g1, g2 = B(0.50, 0.5), B(0.53, 0.5)
    d = B(0.525, 0.5)
    assert mt.match_detections([Detection(d, 0.9), Detection(g1, 0.8)], [g1, g2]) == [True, True]


def test_match_respects_iou_threshold():
    g = B(0.5, 0.5, 0.2, 0.2)
    d = B(0.5 + 0.2 / 3, 0.5, 0.2, 0.2)  # iou exactly 0.5
    assert mt.iou(d, g) == pytest.approx(0.5, abs=1e-12)
    assert mt.match_detections([Detection(d, 0.9)], [g], EvalConfig(0.4)) == [True]
    assert mt.match_detections([Detection(d, 0.9)], [g], EvalConfig(0.6)) == [False]


@pytest.mark.parametrize("seed", range(50))
def test_match_three_dets_two_gts_against_oracle(seed):
    rng = np.random.default_rng(seed)
    gts = [oracles._random_box(rng, 0) for _ in range(2)]
    dets = [Detection(oracles._jitter(rng, gts[int(rng.integers(2))], 0.3), float(rng.integers(0, 4)) / 4)
            for _ in range(3)]
    assert mt.match_detections(dets, gts) == oracles.protocol_match(dets, gts)


def staircase():
    gts = [B(0.1, 0.1), B(0.5, 0.5), B(0.8, 0.8)]
    far = B(0.3, 0.8)
    dets = [Detection(gts[0], 0.9), Detection(far, 0.8), Detection(gts[1], 0.7),
            Detection(far, 0.6), Detection(gts[2], 0.5)]
    return dets, gts


def test_ap_staircase():
    dets, gts = staircase()
    assert mt.average_precision(dets, gts) == pytest.approx(STAIRCASE_AP, abs=1e-12)
    stream = list(zip([d.confidence for d in dets], mt.match_detections(dets, gts)))
    assert oracles.ap_oracle(stream, 3) == pytest.approx(STAIRCASE_AP, abs=1e-12)


def test_ap_trivial_cases():
    gts = [B(0.2, 0.2), B(0.7, 0.7)]
    assert mt.average_precision([Detection(g, 0.9) for g in gts], gts) == 1.0
    assert mt.average_precision([], gts) == 0.0
    assert mt.average_precision([Detection(B(0.5, 0.2), 0.9)], gts) == 0.0
    with pytest.raises(UndefinedMetricError):
        mt.average_precision([Detection(gts[0], 0.9)], [])


def test_ap_pools_images():
    dets, gts = staircase()
    by_img_d = {"a": dets[:2], "b": dets[2:]}
    by_img_g = {"a": gts[:1], "b": gts[1:]}
    assert mt.average_precision(by_img_d, by_img_g) == pytest.approx(STAIRCASE_AP, abs=1e-12)


def test_ap_invariant_under_monotone_confidence_map():
    dets, gts = staircase()
    mapped = [Detection(d.box, d.confidence ** 3) for d in dets]
    assert mt.average_precision(mapped, gts) == mt.average_precision(dets, gts)


def test_low_confidence_fp_never_raises_ap():
    rng = np.random.default_rng(0)
    for _ in range(100):
        dets, gts = oracles.random_instance(rng, max_images=3)
        if not any(g.class_id == 0 for gs in gts.values() for g in gs):
            continue
        d0 = {k: [d for d in v if d.class_id == 0] for k, v in dets.items()}
        g0 = {k: [g for g in v if g.class_id == 0] for k, v in gts.items()}
        base = mt.average_precision(d0, g0)
        low = min([d.confidence for v in d0.values() for d in v] + [1.0]) / 2
        extra = dict(d0)
        extra["img00"] = d0.get("img00", []) + [Detection(B(0.95, 0.05, 0.05, 0.05), low)]
        assert mt.average_precision(extra, g0) <= base + 1e-12


def test_f1_examples():
    gts = [B(0.2, 0.2), B(0.7, 0.7)]
    f1, p, r, t = mt.f1_best_threshold([Detection(gts[0], 0.9), Detection(gts[1], 0.6)], gts)
    assert (f1, p, r, t) == (1.0, 1.0, 1.0, 0.6)
    f1, p, r, t = mt.f1_best_threshold([Detection(B(0.5, 0.2), 0.9)], gts)
    assert f1 == 0.0
    assert mt.f1_best_threshold([], gts) == (0.0, 0.0, 0.0, 0.0)


def test_f1_ties_go_to_higher_threshold():
    g = [B(0.2, 0.2), B(0.7, 0.7)]
    # t=0.9: P=1, R=1/2 -> 2/3. t=0.5: P=2/4, R=1 -> 2/3
    dets = [Detection(g[0], 0.9), Detection(B(0.4, 0.9), 0.7), Detection(B(0.9, 0.1), 0.6), Detection(g[1], 0.5)]
    f1, _, _, t = mt.f1_best_threshold(dets, g)
    assert f1 == pytest.approx(2 / 3)
    assert t == 0.9


def test_count_error_examples():
    assert mt.count_error([2, 0, 5], [2, 0, 5]) == 0.0
    assert mt.count_error([3, 0], [1, 2]) == 2.0
    with pytest.raises(UndefinedMetricError):
        mt.count_error([], [])
    with pytest.raises(ValidationError):
        mt.count_error([1], [1, 2])


def test_count_error_fixture_value():
    rows = sweep.parse_csv(sweep.load_fixture("circular_640"))
    (row,) = [r for r in rows if r.gsd == 0.05 and r.q == 0.5]
    assert row.count_error == 0.375
    assert row.aperture == "circular" and row.input_size == 640


def check_against_oracles(dets, gts):
    report = mt.evaluate(dets, gts)
    errors = oracles.oracle_errors(report, dets, gts)
    assert max(errors.values()) <= 1e-9, errors
    for v in (report.map, report.precision, report.recall, report.f1, *report.per_class_ap.values()):
        assert 0.0 <= v <= 1.0
    assert report.count_error >= 0


@pytest.mark.parametrize("seed", range(150))
def test_random_instances_match_oracles(seed):
    dets, gts = oracles.random_instance(np.random.default_rng(seed))
    check_against_oracles(dets, gts)


def test_random_30_detection_f1():
    rng = np.random.default_rng(7)
    for _ in range(20):
        dets, gts = oracles.random_instance(rng, max_images=4, max_boxes=10)
        n = sum(len(v) for v in dets.values())
        f1 = mt.f1_best_threshold(dets, gts)[0]
        assert abs(f1 - oracles.f1_oracle(dets, gts)[0]) <= 1e-9, n


def test_f1_is_maximal():
    rng = np.random.default_rng(3)
    for _ in range(30):
        dets, gts = oracles.random_instance(rng, max_images=5)
        best = mt.f1_best_threshold(dets, gts)[0]
        n_gt = sum(len(g) for g in gts.values())
        for t in rng.uniform(0, 1, 5):
            kept = {k: [d for d in v if d.confidence >= t] for k, v in dets.items()}
            rows, _ = mt._pooled(kept, gts, EvalConfig())
            tp, n = sum(r[1] for r in rows), len(rows)
            f1 = 2 * tp / (n + n_gt) if tp else 0.0
            assert best >= f1 - 1e-12


def test_evaluate_perfect_and_class_names():
    gts = {"a": [B(0.2, 0.2), B(0.6, 0.6, cls=2)], "b": [], "c": [B(0.5, 0.5)]}
    dets = {k: [Detection(g, 0.8) for g in v] for k, v in gts.items()}
    rep = mt.evaluate(dets, gts, EvalConfig(per_class_count_error=True), ("cow", "sheep", "dog"))
    assert rep.per_class_ap == {"cow": 1.0, "dog": 1.0}
    assert (rep.map, rep.f1, rep.count_error, rep.best_threshold) == (1.0, 1.0, 0.0, 0.8)
    assert rep.per_class_count_error == {"cow": 0.0, "dog": 0.0}
    assert rep.n_images == 3
    assert "per_class_count_error" not in mt.evaluate(dets, gts).to_dict()


def test_evaluate_empty_predictions():
    gts = {"a": [B(0.2, 0.2)], "b": [B(0.3, 0.3), B(0.7, 0.7)]}
    rep = mt.evaluate({}, gts)
    assert rep.map == 0.0 and rep.f1 == 0.0
    assert rep.count_error == 1.5


def test_prediction_io(tmp_path):
    dets = [Detection(B(0.25, 0.5, 0.1, 0.2, cls=1), 0.875)]
    assert mt.parse_predictions(mt.format_predictions(dets)) == dets
    with pytest.raises(LabelParseError):
        mt.parse_predictions("0 0.5 0.5 0.1 0.1")
    with pytest.raises(LabelParseError):
        mt.parse_predictions("0 0.5 0.5 0.1 0.1 1.5")

    (tmp_path / "gt").mkdir()
    (tmp_path / "pred").mkdir()
    (tmp_path / "gt" / "x.txt").write_text("0 0.5 0.5 0.1 0.1\n")
    (tmp_path / "gt" / "y.txt").write_text("")
    (tmp_path / "pred" / "x.txt").write_text("0 0.5 0.5 0.1 0.1 0.9\n")
    (tmp_path / "pred" / "stray.txt").write_text("0 0.5 0.5 0.1 0.1 0.9\n")
    d, g, errors = mt.load_directory(tmp_path / "pred", tmp_path / "gt")
    assert sorted(g) == ["x", "y"] and d["y"] == [] and errors == []
    (tmp_path / "pred" / "y.txt").write_text("garbage\n")
    _, _, errors = mt.load_directory(tmp_path / "pred", tmp_path / "gt")
    assert len(errors) == 1 and "y.txt" in errors[0]["file"]


def test_eval_config_validation():
    with pytest.raises(ValidationError):
        EvalConfig(iou_threshold=1.0)
    with pytest.raises(ValidationError):
        EvalConfig(threshold_search="grid")
    with pytest.raises(ValidationError):
        Detection(B(0.5, 0.5), 1.2)
