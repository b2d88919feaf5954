import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loadbench.metrics import (
    QUALITY_TARGETS,
    DetectionBox,
    QualityTarget,
    SegMask,
    UndefinedMetricError,
    box_iou,
    evaluate_quality,
    mean_average_precision,
    miou_filtered,
    normalize_answer,
    score_task,
    squad_f1,
    top1_accuracy,
)
from loadbench.rules import BenchmarkId

from oracles import map_oracle, miou_oracle

IC = BenchmarkId.IMAGE_CLASSIFICATION


def onehot(label, n=4):
    v = [0.0] * n
    v[label] = 1.0
    return v


class TestTop1:
    def test_all_correct(self):
        assert top1_accuracy([onehot(i) for i in range(4)], [0, 1, 2, 3]) == 1.0

    def test_all_wrong(self):
        assert top1_accuracy([onehot(i) for i in range(4)], [1, 2, 3, 0]) == 0.0

    def test_three_of_four(self):
        assert top1_accuracy([onehot(i) for i in range(4)], [0, 1, 2, 0]) == 0.75

    def test_tie_goes_to_lowest_class(self):
        assert top1_accuracy([[0.5, 0.5, 0.1]], [0]) == 1.0
        assert top1_accuracy([[0.5, 0.5, 0.1]], [1]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            top1_accuracy([onehot(0)], [0, 1])

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=30))
    def test_adding_correct_sample_never_decreases(self, pairs):
        preds = [onehot(p) for p, _ in pairs]
        labels = [l for _, l in pairs]
        before = top1_accuracy(preds, labels)
        assert top1_accuracy(preds + [onehot(2)], labels + [2]) >= before


class TestBoxIou:
    def test_identical(self):
        b = DetectionBox(1, 2, 5, 7, 1)
        assert box_iou(b, b) == 1.0

    def test_disjoint(self):
        assert box_iou(DetectionBox(0, 0, 1, 1, 1), DetectionBox(2, 2, 3, 3, 1)) == 0.0

    def test_one_seventh(self):
        iou = box_iou(DetectionBox(0, 0, 2, 2, 1), DetectionBox(1, 1, 3, 3, 1))
        # intersection 1, union 4 + 4 - 1
        assert iou == pytest.approx(1 / 7, abs=1e-12)

    def test_zero_area_boxes(self):
        z = DetectionBox(1, 1, 1, 1, 1)
        assert box_iou(z, z) == 0.0

    def test_invalid_box(self):
        with pytest.raises(ValueError):
            DetectionBox(2, 0, 1, 1, 1)


class TestMeanAveragePrecision:
    def test_perfect(self):
        g = DetectionBox(0, 0, 10, 10, 3)
        assert mean_average_precision([[DetectionBox(0, 0, 10, 10, 3, 1.0)]], [[g]]) == 1.0

    def test_iou_exactly_060(self):
        # pred covers 60 of the 100-unit GT box: matched at 0.50, 0.55, 0.60 only
        pred = DetectionBox(0, 0, 10, 6, 1, 1.0)
        assert box_iou(pred, DetectionBox(0, 0, 10, 10, 1)) == 0.6
        assert mean_average_precision([[pred]], [[DetectionBox(0, 0, 10, 10, 1)]]) == pytest.approx(0.3, abs=1e-12)

    def test_no_ground_truth(self):
        with pytest.raises(UndefinedMetricError):
            mean_average_precision([[DetectionBox(0, 0, 1, 1, 1)]], [[]])

    def test_prediction_only_classes_ignored(self):
        g = DetectionBox(0, 0, 4, 4, 1)
        preds = [[DetectionBox(0, 0, 4, 4, 1, 0.9), DetectionBox(0, 0, 4, 4, 2, 0.8)]]
        assert mean_average_precision(preds, [[g]]) == 1.0

    def test_duplicate_perfect_image_keeps_map(self):
        g = [DetectionBox(0, 0, 4, 4, 1)]
        p = [DetectionBox(0, 0, 4, 4, 1, 0.9)]
        base = mean_average_precision([p], [g])
        assert mean_average_precision([p, p], [g, g]) >= base


_coord = st.integers(0, 6)


@st.composite
def boxes(draw, with_score):
    x0, x1 = sorted((draw(_coord), draw(_coord)))
    y0, y1 = sorted((draw(_coord), draw(_coord)))
    score = draw(st.sampled_from([0.25, 0.5, 0.75, 1.0])) if with_score else 1.0
    return DetectionBox(x0, y0, x1 + 1, y1 + 1, draw(st.integers(1, 4)), score)


@st.composite
def detection_instances(draw):
    n_img = draw(st.integers(1, 4))
    gts = [draw(st.lists(boxes(False), max_size=4)) for _ in range(n_img)]
    preds = [draw(st.lists(boxes(True), max_size=4)) for _ in range(n_img)]
    if not any(gts):
        gts[0] = [draw(boxes(False))]
    return preds, gts


@settings(max_examples=300, deadline=None)
@given(detection_instances())
def test_map_matches_exact_oracle(instance):
    preds, gts = instance
    assert abs(mean_average_precision(preds, gts) - float(map_oracle(preds, gts))) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(detection_instances(), st.randoms(use_true_random=False))
def test_map_image_permutation_invariant(instance, rnd):
    preds, gts = instance
    order = list(range(len(gts)))
    rnd.shuffle(order)
    shuffled = mean_average_precision([preds[i] for i in order], [gts[i] for i in order])
    # ties between equal-score detections can reorder, so compare with the exact oracle
    assert abs(shuffled - float(map_oracle([preds[i] for i in order], [gts[i] for i in order]))) <= 1e-9


class TestMiou:
    def test_perfect(self):
        m = SegMask([[1, 2], [3, 4]])
        assert miou_filtered([m], [m]) == 1.0

    def test_all_class_32(self):
        with pytest.raises(UndefinedMetricError):
            miou_filtered([SegMask([[1, 1]])], [SegMask([[32, 32]])])

    def test_hand_counted(self):
        gt = SegMask([[1, 1], [2, 32]])
        pred = SegMask([[1, 2], [2, 2]])
        assert miou_filtered([pred], [gt]) == pytest.approx(0.5, abs=1e-12)

    def test_label_range(self):
        with pytest.raises(ValueError):
            SegMask([[0, 1]])
        with pytest.raises(ValueError):
            SegMask([[33]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            miou_filtered([SegMask([[1, 1]])], [SegMask([[1], [1]])])

    def test_rle_round_trip(self):
        m = SegMask(np.array([[1, 1, 2], [2, 2, 32]]))
        assert SegMask.from_rle(m.to_rle(), 2, 3) == m


@st.composite
def seg_instances(draw):
    n = draw(st.integers(1, 4))
    h = draw(st.integers(1, 4))
    w = draw(st.integers(1, 4))
    # four classes drawn from a mix of scored labels and the catch-all 32
    label = st.sampled_from([1, 2, 3, 32])
    grid = st.lists(st.lists(label, min_size=w, max_size=w), min_size=h, max_size=h)
    return [SegMask(draw(grid)) for _ in range(n)], [SegMask(draw(grid)) for _ in range(n)]


@settings(max_examples=300, deadline=None)
@given(seg_instances())
def test_miou_matches_exact_oracle(instance):
    preds, gts = instance
    expected = miou_oracle(preds, gts)
    if expected is None:
        with pytest.raises(UndefinedMetricError):
            miou_filtered(preds, gts)
    else:
        assert abs(miou_filtered(preds, gts) - float(expected)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(seg_instances(), st.randoms(use_true_random=False))
def test_miou_permutation_invariant(instance, rnd):
    preds, gts = instance
    if miou_oracle(preds, gts) is None:
        return
    order = list(range(len(gts)))
    rnd.shuffle(order)
    a = miou_filtered(preds, gts)
    b = miou_filtered([preds[i] for i in order], [gts[i] for i in order])
    assert a == b


class TestSquadF1:
    def test_identical(self):
        assert squad_f1("Denver Broncos", ["Denver Broncos"]) == 1.0

    def test_no_overlap(self):
        assert squad_f1("Carolina", ["Denver Broncos"]) == 0.0

    def test_half_overlap(self):
        # "a" is an article and vanishes, leaving P=1, R=1/2
        assert squad_f1("a b", ["b c"]) == pytest.approx(2 / 3)

    def test_half_overlap_plain_tokens(self):
        assert squad_f1("x y", ["y z"]) == pytest.approx(0.5)

    def test_normalization(self):
        assert normalize_answer("The  Eiffel, Tower!") == "eiffel tower"
        assert squad_f1("the eiffel tower", ["Eiffel Tower."]) == 1.0

    def test_max_over_references(self):
        assert squad_f1("paris", ["london", "Paris", "rome"]) == 1.0

    def test_empty_vs_empty(self):
        assert squad_f1("the", ["a"]) == 1.0

    def test_partial(self):
        # pred 3 tokens, ref 2 tokens, 2 shared: P=2/3, R=1
        assert squad_f1("red blue green", ["blue red"]) == pytest.approx(0.8)

    def test_needs_reference(self):
        with pytest.raises(ValueError):
            squad_f1("x", [])


class TestQualityGate:
    def test_published_thresholds(self):
        expected = {
            BenchmarkId.IMAGE_CLASSIFICATION: 74.66,
            BenchmarkId.OBJECT_DETECTION: 22.7,
            BenchmarkId.SEGMENTATION: 53.156,
            BenchmarkId.QUESTION_ANSWERING: 87.4014,
        }
        for bid, thr in expected.items():
            assert abs(QUALITY_TARGETS[bid].threshold - thr) <= 1e-9

    def test_top1_examples(self):
        t = QUALITY_TARGETS[IC]
        assert evaluate_quality(74.7, t).passed
        assert not evaluate_quality(74.6, t).passed

    def test_boundary_inclusive(self):
        r = evaluate_quality(22.7, QUALITY_TARGETS[BenchmarkId.OBJECT_DETECTION])
        assert r.passed and r.threshold_used == 22.7

    @given(st.floats(0, 100, allow_nan=False))
    def test_gate_coherence(self, value):
        for t in QUALITY_TARGETS.values():
            r = evaluate_quality(value, t)
            assert r.passed == (value >= r.threshold_used)

    def test_invalid_target(self):
        with pytest.raises(ValueError):
            QualityTarget(IC, 76.19, 0.0)
        with pytest.raises(ValueError):
            QualityTarget(IC, -1.0, 0.5)


def test_score_task_qa_averages_f1():
    assert score_task(BenchmarkId.QUESTION_ANSWERING, ["x y", "paris"], [["y z"], ["Paris"]]) == pytest.approx(0.75)


def test_metrics_in_unit_interval():
    rnd = random.Random(0)
    for _ in range(50):
        labels = [rnd.randrange(4) for _ in range(10)]
        preds = [onehot(rnd.randrange(4)) for _ in range(10)]
        assert 0.0 <= top1_accuracy(preds, labels) <= 1.0
