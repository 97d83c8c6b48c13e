import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from promptdet.mpod.boxes import Box
from promptdet.mpod.data import Annotation
from promptdet.mpod.det import Detection
from promptdet.mpod.metrics import average_precision, evaluate, match_detections
from promptdet.mpod.metrics.apeval import write_pr_csv, write_report

GT = Box(0.5, 0.5, 1.0, 1.0)


def det(box, conf, label="a"):
    return Detection(Box(*box), (conf,), label, conf)


def test_match_threshold():
    gts = {0: [Annotation("a", GT)]}
    # > IoU 0.6 with the ground truth
    dets = {0: [det((0.3, 0.5, 0.6, 1.0), 0.9)]}
    assert match_detections(dets, gts, "a", 0.5)[0].tolist() == [True]
    assert match_detections(dets, gts, "a", 0.7)[0].tolist() == [False]
    flags, conf, ngt = match_detections({0: [det(GT, 0.5), det(GT, 0.8)]}, gts, "a", 0.5)
    assert flags.tolist() == [True, False] and conf.tolist() == [0.8, 0.5] and ngt == 1
    # > other categories never match
    assert match_detections({0: [det(GT, 0.8, "b")]}, gts, "a", 0.5)[0].size == 0


def test_match_ties():
    gts = {0: [Annotation("a", GT)], 1: [Annotation("a", GT)]}
    flags, _, ngt = match_detections({1: [det(GT, 0.5)], 0: [det((0.3, 0.5, 0.6, 1.0), 0.5)]},
                                     gts, "a", 0.7)
    # > equal confidences rank by image id
    assert flags.tolist() == [False, True] and ngt == 2


@pytest.mark.parametrize("flags, ngt, ap", [
    ([True], 1, 1.0),
    ([False, True], 1, 0.5),
    ([], 1, 0.0),
    ([True, False, True], 3, 5 / 9),
    ([True, True], 4, 0.5)])
def test_average_precision(flags, ngt, ap):
    assert abs(average_precision(np.array(flags, dtype=bool), ngt) - ap) < 1e-12


def test_average_precision_no_gt():
    assert average_precision(np.array([False]), 0) is None


def three_images():
    gts = {i: [Annotation("a", GT)] for i in range(3)}
    gts[1].append(Annotation("b", Box(0.2, 0.2, 0.2, 0.2)))
    dets = {
        0: [det(GT, 0.9)],
        1: [det((0.8, 0.8, 0.1, 0.1), 0.8), det((0.2, 0.2, 0.2, 0.2), 0.6, "b")],
        2: [det(GT, 0.7)]}
    return dets, gts


def test_evaluate():
    dets, gts = three_images()
    res = evaluate(dets, gts, ["a", "b", "c"])
    assert list(res.per_category) == ["a", "b"]
    assert_allclose(res.per_category["a"], 5 / 9, atol=1e-12)
    assert_allclose(res.per_category["b"], 1, atol=1e-12)
    assert abs(res.ap50 - (5/9 + 1) / 2) < 1e-12
    assert abs(res.map - np.mean([np.mean(v) for v in res.per_category.values()])) < 1e-12
    assert len(res.thresholds) == 10 and res.thresholds[0] == 0.5
    rec, prec = res.curves["a"]
    assert_allclose(rec, [1/3, 1/3, 2/3], atol=1e-15)
    assert_allclose(prec, [1, 0.5, 2/3], atol=1e-15)


def test_evaluate_perfect(scenes):
    dets = {s.index: [det(a.box, 1.0, a.category) for a in s.annotations] for s in scenes}
    names = sorted({a.category for s in scenes for a in s.annotations})
    res = evaluate(dets, scenes, names)
    assert abs(res.ap50 - 1) < 1e-12 and abs(res.map - 1) < 1e-12
    empty = evaluate({}, scenes, names)
    assert empty.ap50 == 0 and empty.map == 0


def test_evaluate_errors():
    dets, gts = three_images()
    with pytest.raises(ValueError):
        evaluate(dets, {}, ["a", "b"])
    with pytest.raises(ValueError):
        evaluate(dets, gts, ["a"])


def test_reports(tmp_path):
    dets, gts = three_images()
    res = evaluate(dets, gts, ["a", "b"])
    meta = {"config_hash": "abc", "seed": 3}
    write_report(tmp_path / "metrics.json", res, meta)
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert rep["meta"] == meta
    assert rep["ap50"] == res.ap50 and rep["map"] == res.map
    assert set(rep["per_category"]) == {"a", "b"}
    write_pr_csv(tmp_path / "pr.csv", res, meta)
    lines = (tmp_path / "pr.csv").read_text().splitlines()
    assert json.loads(lines[0][2:]) == meta
    rows = list(csv.DictReader(lines[1:]))
    assert [r["category"] for r in rows] == ["a"] * 3 + ["b"]
    assert float(rows[2]["recall"]) == 2 / 3


def scaled(dets, s):
    return {i: [d._replace(scores=tuple(s * v for v in d.scores), confidence=s * d.confidence)
                for d in ds] for i, ds in dets.items()}


def test_ap_rescaled_confidences():
    dets, gts = three_images()
    res = evaluate(dets, gts, ["a", "b"])
    for s in (0.37, 1.0, 12.5):
        rs = evaluate(scaled(dets, s), gts, ["a", "b"])
        assert rs.per_category == res.per_category
        assert rs.ap50 == res.ap50 and rs.map == res.map


def test_ap_duplicated_images():
    dets, gts = three_images()
    res = evaluate(dets, gts, ["a", "b"])
    dup = evaluate({**dets, **{i + 3: ds for i, ds in dets.items()}},
                   {**gts, **{i + 3: g for i, g in gts.items()}}, ["a", "b"])
    for k in res.per_category:
        assert_allclose(dup.per_category[k], res.per_category[k], atol=1e-12)
    assert abs(dup.ap50 - res.ap50) < 1e-12 and abs(dup.map - res.map) < 1e-12


def test_ap_appended_true_positive():
    dets, gts = three_images()
    before = evaluate(dets, gts, ["a", "b"]).per_category["a"][0]
    # > image 1 still has an unmatched "a"; the new detection ranks last
    dets[1] = dets[1] + [det(GT, 0.05)]
    after = evaluate(dets, gts, ["a", "b"]).per_category["a"][0]
    assert after >= before
    assert abs(after - 5/6) < 1e-12
    rng = np.random.default_rng(0)
    for _ in range(500):
        flags = rng.random(int(rng.integers(0, 12))) < 0.5
        ngt = int(flags.sum()) + int(rng.integers(1, 4))
        assert average_precision(np.append(flags, True), ngt) >= \
            average_precision(flags, ngt) - 1e-15
