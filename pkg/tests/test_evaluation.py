import csv
import json

import numpy as np
import pytest

from arcodec.errors import InputError, ParseError
from arcodec.evaluation import (REPORT_COLUMNS, APResult, Detection,
                                LatencyStats, evaluate_detections,
                                ingest_detections, iou, latency_bench,
                                match_detections, rate_precision_report,
                                voc_ap)
from arcodec.loss import BoundingBox


def det(image_id, x, y, w, h, score, label="person"):
    return Detection(image_id=image_id, box=BoundingBox(x, y, w, h),
                     confidence=score, label=label)


def ap_oracle(tp_flags, confidences, num_gt):
    """Brute-force all-point AP: walk the sorted list, collect PR points,
    integrate max-precision-to-the-right over every recall step."""
    if num_gt == 0 or not tp_flags:
        return 0.0
    order = sorted(range(len(confidences)),
                   key=lambda i: -confidences[i])
    points = []
    tp = fp = 0
    for i in order:
        if tp_flags[i]:
            tp += 1
        else:
            fp += 1
        points.append((tp / num_gt, tp / (tp + fp)))
    ap = 0.0
    prev_r = 0.0
    for r, _ in points:
        if r > prev_r:
            best = max(p for rr, p in points if rr >= r)
            ap += (r - prev_r) * best
            prev_r = r
    return ap


# -- iou ---------------------------------------------------------------------


def test_iou_identical():
    b = BoundingBox(3, 4, 10, 12)
    assert iou(b, b) == pytest.approx(1.0)


def test_iou_disjoint():
    assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(5, 5, 2, 2)) == 0.0


def test_iou_partial_overlap():
    a = BoundingBox(0, 0, 2, 2)
    b = BoundingBox(1, 0, 2, 2)
    # intersection 1x2, union 4 + 4 - 2 = 6
    assert iou(a, b) == pytest.approx(1.0 / 3.0)


def test_iou_containment():
    outer = BoundingBox(0, 0, 4, 4)
    inner = BoundingBox(1, 1, 2, 2)
    assert iou(outer, inner) == pytest.approx(4.0 / 16.0)


# -- matching -----------------------------------------------------------------


def test_matching_claims_each_gt_once():
    gt = [("a", BoundingBox(0, 0, 10, 10))]
    dets = [det("a", 0, 0, 10, 10, 0.9),
            det("a", 1, 1, 10, 10, 0.8)]
    flags = match_detections(dets, gt)
    assert flags == [True, False]


def test_matching_confidence_order_wins():
    gt = [("a", BoundingBox(0, 0, 10, 10))]
    dets = [det("a", 1, 1, 10, 10, 0.3),
            det("a", 0, 0, 10, 10, 0.9)]
    flags = match_detections(dets, gt)
    # the higher-confidence detection claims the box despite input order
    assert flags == [False, True]


def test_matching_prefers_best_overlap():
    gt = [("a", BoundingBox(0, 0, 10, 10)), ("a", BoundingBox(20, 0, 10, 10))]
    dets = [det("a", 18, 0, 10, 10, 0.9)]
    assert match_detections(dets, gt) == [True]
    r = evaluate_detections(dets, gt)
    assert r.tp == 1 and r.fp == 0 and r.num_gt == 2


def test_matching_respects_image_ids():
    gt = [("a", BoundingBox(0, 0, 10, 10))]
    dets = [det("b", 0, 0, 10, 10, 0.9)]
    assert match_detections(dets, gt) == [False]


def test_matching_threshold():
    gt = [("a", BoundingBox(0, 0, 10, 10))]
    dets = [det("a", 5, 0, 10, 10, 0.9)]
    # overlap 50/150 = 1/3 < 0.5
    assert match_detections(dets, gt, iou_threshold=0.5) == [False]
    assert match_detections(dets, gt, iou_threshold=0.3) == [True]
    with pytest.raises(InputError):
        match_detections(dets, gt, iou_threshold=0.0)


def test_matching_falls_back_to_unmatched_gt():
    # best-overlap box already claimed: the detection takes the best
    # still-unmatched box when it clears the threshold
    gt = [("a", BoundingBox(0, 0, 10, 10)), ("a", BoundingBox(2, 0, 10, 10))]
    dets = [det("a", 0, 0, 10, 10, 0.9),
            det("a", 1, 0, 10, 10, 0.8)]
    flags = match_detections(dets, gt)
    assert flags == [True, True]


# -- average precision -----------------------------------------------------------


def test_ap_hand_case():
    # 2 GT; detections sorted by confidence: TP, FP, TP
    # recalls [.5, .5, 1], precisions [1, .5, 2/3] -> AP = 5/6
    flags = [True, False, True]
    scores = [0.9, 0.8, 0.7]
    assert voc_ap(flags, scores, num_gt=2) == pytest.approx(5.0 / 6.0,
                                                            abs=1e-12)
    assert ap_oracle(flags, scores, 2) == pytest.approx(5.0 / 6.0, abs=1e-12)


def test_ap_perfect_and_zero():
    assert voc_ap([True, True], [0.9, 0.8], num_gt=2) == pytest.approx(1.0)
    assert voc_ap([False, False], [0.9, 0.8], num_gt=2) == 0.0
    assert voc_ap([], [], num_gt=0) == 0.0
    assert voc_ap([True], [0.5], num_gt=0) == 0.0


def test_ap_matches_oracle_randomized():
    rng = np.random.default_rng(17)
    for _ in range(200):
        n = int(rng.integers(1, 30))
        flags = (rng.uniform(size=n) < 0.4).tolist()
        scores = rng.uniform(size=n).tolist()
        num_gt = max(1, sum(flags) + int(rng.integers(0, 5)))
        got = voc_ap(flags, scores, num_gt)
        want = ap_oracle(flags, scores, num_gt)
        assert got == pytest.approx(want, abs=1e-9)


def test_ap_extra_low_confidence_fp_never_helps():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 12))
        flags = (rng.uniform(size=n) < 0.5).tolist()
        scores = rng.uniform(0.1, 1.0, size=n).tolist()
        num_gt = max(1, sum(flags))
        base = voc_ap(flags, scores, num_gt)
        worse = voc_ap(flags + [False], scores + [0.01], num_gt)
        assert worse <= base + 1e-12


def test_evaluate_detections_end_to_end():
    gt = [("a", BoundingBox(0, 0, 10, 10)), ("b", BoundingBox(5, 5, 8, 8))]
    dets = [det("a", 0, 0, 10, 10, 0.9),
            det("b", 50, 50, 4, 4, 0.8),
            det("b", 5, 5, 8, 8, 0.7)]
    r = evaluate_detections(dets, gt)
    assert isinstance(r, APResult)
    assert (r.tp, r.fp, r.num_gt) == (2, 1, 2)
    assert r.ap == pytest.approx(5.0 / 6.0)


# -- detection ingest -------------------------------------------------------------


def test_ingest_detections(tmp_path):
    path = tmp_path / "dets.jsonl"
    rows = [
        {"id": "img1", "class": "person", "box": [1, 2, 3, 4], "score": 0.75},
        {"id": "img2", "class": "face", "box": [5.5, 6, 7, 8], "score": 0.25},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n",
                    encoding="utf-8")
    dets = ingest_detections(path)
    assert len(dets) == 2
    assert dets[0].image_id == "img1"
    assert dets[0].confidence == 0.75
    assert dets[1].label == "face"
    assert dets[1].box.x == 5.5


def test_ingest_rejects_bad_score(tmp_path):
    path = tmp_path / "dets.jsonl"
    path.write_text(json.dumps(
        {"id": "a", "class": "p", "box": [0, 0, 1, 1], "score": 1.5}) + "\n",
        encoding="utf-8")
    with pytest.raises(ParseError) as err:
        ingest_detections(path)
    assert err.value.line == 1


def test_ingest_rejects_missing_keys(tmp_path):
    path = tmp_path / "dets.jsonl"
    path.write_text('{"id": "a"}\n', encoding="utf-8")
    with pytest.raises(ParseError):
        ingest_detections(path)


def test_ingest_rejects_bad_json_with_line(tmp_path):
    path = tmp_path / "dets.jsonl"
    good = json.dumps({"id": "a", "class": "p", "box": [0, 0, 1, 1],
                       "score": 0.5})
    path.write_text(good + "\nnot json\n", encoding="utf-8")
    with pytest.raises(ParseError) as err:
        ingest_detections(path)
    assert err.value.line == 2


def test_ingest_rejects_bad_box(tmp_path):
    path = tmp_path / "dets.jsonl"
    path.write_text(json.dumps(
        {"id": "a", "class": "p", "box": [0, 0, 1], "score": 0.5}) + "\n",
        encoding="utf-8")
    with pytest.raises(ParseError):
        ingest_detections(path)


def test_detection_score_validation():
    with pytest.raises(InputError):
        det("a", 0, 0, 1, 1, -0.1)
    with pytest.raises(InputError):
        det("a", 0, 0, 1, 1, float("nan"))


# -- latency ----------------------------------------------------------------------


def test_latency_stats_from_samples():
    s = LatencyStats.from_samples([1.0, 2.0, 3.0])
    assert s.min == 1.0
    assert s.mean == pytest.approx(2.0)
    assert s.std == pytest.approx(1.0)
    assert s.samples == 3
    assert not s.degenerate


def test_latency_stats_single_sample_degenerate():
    s = LatencyStats.from_samples([0.5])
    assert s.degenerate
    assert s.std == 0.0
    assert s.samples == 1
    with pytest.raises(InputError):
        LatencyStats.from_samples([])


def test_latency_bench_with_stub_clock():
    ticks = iter(range(10000))

    def fake_timer():
        return float(next(ticks))

    calls = []
    stats = latency_bench(lambda x: calls.append(x), ["a", "b", "c"],
                          repeats=10, timer=fake_timer)
    # constant unit interval between timer reads: min == mean, zero std
    assert stats.samples == 30
    assert stats.min == stats.mean == 1.0
    assert stats.std == 0.0
    # one warm-up call plus the timed ones
    assert len(calls) == 31


def test_latency_bench_validation():
    with pytest.raises(InputError):
        latency_bench(lambda x: None, [], repeats=10)
    with pytest.raises(InputError):
        latency_bench(lambda x: None, ["a"], repeats=0)


# -- reporting ---------------------------------------------------------------------


def test_rate_precision_report(tmp_path):
    rows = [
        {"method": "codec", "preset": "base", "mean_bpp": 0.24,
         "bpp_std": 0.01, "ap": 0.19, "tp": 234, "fp": 1159},
        {"method": "reference", "preset": "q90", "mean_bpp": 1.91,
         "bpp_std": 0.05, "ap": 0.86, "tp": 1408, "fp": 1949},
    ]
    path = tmp_path / "report.csv"
    rate_precision_report(rows, path)
    with open(path) as fh:
        parsed = list(csv.DictReader(fh))
    assert list(parsed[0].keys()) == list(REPORT_COLUMNS)
    assert parsed[0]["tp"] == "234" and parsed[0]["fp"] == "1159"
    assert parsed[1]["tp"] == "1408" and parsed[1]["fp"] == "1949"


def test_rate_precision_report_missing_column(tmp_path):
    with pytest.raises(InputError):
        rate_precision_report([{"method": "x"}], tmp_path / "r.csv")
