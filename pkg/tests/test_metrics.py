import numpy as np

from srcnet.metrics import (
    CSV_HEADER, ConfusionStats, MetricReport, evaluate_masks, evaluate_stats,
    f1_from_pr, iou_from_f1,
)

from oracles import confusion_brute


def test_published_row_arithmetic():
    # FC-EF on LEVIR-CD: P=0.7460, R=0.8826 -> F1 0.8086, IoU 0.6787
    f1 = f1_from_pr(0.7460, 0.8826)
    assert abs(f1 - 0.8086) < 5e-4
    assert abs(iou_from_f1(f1) - 0.6787) < 5e-4


def test_iou_f1_identity_on_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(25):
        pred = rng.random((16, 16)) < rng.uniform(0.2, 0.8)
        gt = rng.random((16, 16)) < rng.uniform(0.2, 0.8)
        report = evaluate_masks(pred, gt)
        if report.f1 > 0:
            assert abs(report.iou - iou_from_f1(report.f1)) < 1e-12
        for value in (report.precision, report.recall, report.f1,
                      report.oa, report.iou):
            assert 0.0 <= value <= 1.0


def test_matches_brute_force_counter():
    rng = np.random.default_rng(1)
    for _ in range(10):
        pred = rng.random((32, 32)) < 0.5
        gt = rng.random((32, 32)) < 0.5
        stats = ConfusionStats.from_masks(pred, gt)
        tp, fp, tn, fn = confusion_brute(pred, gt)
        assert (stats.tp, stats.fp, stats.tn, stats.fn) == (tp, fp, tn, fn)
        assert stats.total == pred.size


def test_perfect_prediction_scores_one():
    rng = np.random.default_rng(2)
    gt = rng.random((8, 8)) < 0.5
    report = evaluate_masks(gt, gt)
    assert (report.precision, report.recall, report.f1, report.oa,
            report.iou) == (1.0, 1.0, 1.0, 1.0, 1.0)
    assert not report.undefined


def test_zero_denominator_flags():
    report = evaluate_stats(ConfusionStats(tp=0, fp=0, tn=10, fn=0))
    assert report.precision == 0.0 and report.recall == 0.0
    assert "precision" in report.undefined and "recall" in report.undefined
    all_background_pred = evaluate_stats(ConfusionStats(tp=0, fp=0, tn=5, fn=5))
    assert all_background_pred.recall == 0.0
    assert "precision" in all_background_pred.undefined


def test_merge_is_associative_and_matches_whole():
    rng = np.random.default_rng(3)
    pred = rng.random((8, 12)) < 0.5
    gt = rng.random((8, 12)) < 0.5
    whole = ConfusionStats.from_masks(pred, gt)
    parts = [ConfusionStats.from_masks(pred[:, i:i + 4], gt[:, i:i + 4])
             for i in range(0, 12, 4)]
    merged = parts[0] + (parts[1] + parts[2])
    merged_other = (parts[0] + parts[1]) + parts[2]
    assert merged == merged_other == whole


def test_csv_row_matches_header_order():
    report = MetricReport(0.5, 0.25, 0.3333, 0.9, 0.2, ())
    row = report.csv_row("full", "synth", 12345)
    assert CSV_HEADER.split(",") == ["model", "dataset", "precision", "recall",
                                     "f1", "oa", "iou", "params"]
    fields = row.split(",")
    assert fields[0] == "full" and fields[1] == "synth"
    assert fields[2] == "0.5000" and fields[-1] == "12345"
