import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import hard_nms
from tadkit.annotations import LabelSpace, PredictionSet
from tadkit.ensemble import (
    NmsConfig, VideoClassScores, assign_labels, ensemble_class_scores, load_ensemble_spec,
    merge_detections, soft_nms, soft_nms_predictions, topk_accuracy,
)
from tadkit.errors import RangeError, TadError, UnknownLabelError
from tadkit.segments import ScoredDetection, Segment


def det(s, e, score, label=0, vid="v"):
    return ScoredDetection(vid, Segment(s, e), label, score)


def test_single_detection_unchanged():
    d = det(0, 1, 0.7)
    assert soft_nms([d]) == [d]
    assert soft_nms([]) == []


def test_disjoint_untouched():
    ds = [det(0, 1, 0.9), det(2, 3, 0.8)]
    assert soft_nms(ds, NmsConfig(0.5)) == ds


def test_gaussian_decay_hand_value():
    out = soft_nms([det(0, 1, 0.9), det(0.1, 1.1, 0.8)], NmsConfig(sigma=0.5))
    t = 0.9 / 1.1
    assert out[0].score == 0.9
    assert out[1].score == pytest.approx(0.8 * math.exp(-t * t / 0.5), abs=1e-12)
    assert out[1].score == pytest.approx(0.20971, abs=1e-4)


def test_linear_mode():
    out = soft_nms([det(0, 1, 0.9), det(0.5, 1.5, 0.8)], NmsConfig(method="linear", iou_threshold=0.3))
    assert out[1].score == pytest.approx(0.8 * (1 - 1 / 3))
    out = soft_nms([det(0, 1, 0.9), det(0.5, 1.5, 0.8)], NmsConfig(method="linear", iou_threshold=0.5))
    assert out[1].score == 0.8


def test_score_floor_drops():
    out = soft_nms([det(0, 1, 0.9), det(0, 1, 0.8)], NmsConfig(sigma=0.1, score_floor=0.01))
    # tIoU 1 => factor exp(-10) ~ 4.5e-5
    assert len(out) == 1


def test_per_category_override():
    cfg = NmsConfig(sigma=0.5, per_category={1: (1e-12, 1e-4)})
    pair = lambda lab: [det(0, 1, 0.9, lab), det(0.5, 1.5, 0.8, lab)]
    assert len(soft_nms(pair(0), cfg)) == 2
    assert len(soft_nms(pair(1), cfg)) == 1


def test_config_validation():
    with pytest.raises(RangeError):
        NmsConfig(sigma=0)
    with pytest.raises(RangeError):
        NmsConfig(score_floor=1.0)
    with pytest.raises(TadError):
        NmsConfig(method="cubic")


def random_group(rng, n=10):
    starts = rng.uniform(0, 20, n)
    lens = rng.uniform(0.5, 6, n)
    scores = rng.uniform(0, 1, n)
    return [det(float(s), float(s + l), float(c)) for s, l, c in zip(starts, lens, scores)]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 2.0))
def test_soft_nms_properties(seed, sigma):
    ds = random_group(np.random.default_rng(seed))
    out = soft_nms(ds, NmsConfig(sigma=sigma, score_floor=0.0))
    assert len(out) <= len(ds)
    original = {(d.segment.start, d.segment.end): d.score for d in ds}
    for d in out:
        assert d.score <= original[(d.segment.start, d.segment.end)]
    assert [d.score for d in out] == sorted((d.score for d in out), reverse=True)


def test_hard_limit_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        ds = random_group(rng)
        floor = float(rng.choice([0.0, 1e-4, 0.3]))
        got = soft_nms(ds, NmsConfig(sigma=1e-12, score_floor=floor))
        want = hard_nms([(d.segment.start, d.segment.end, d.score) for d in ds], floor)
        assert [(d.segment.start, d.segment.end) for d in got] == [(s, e) for s, e, _ in want]


def test_soft_nms_predictions_groups_by_label():
    labels = LabelSpace(("a", "b"))
    preds = PredictionSet({"v2": [det(0, 1, 0.9, 1, "v2"), det(0, 1, 0.8, 0, "v2")],
                           "v1": [det(0, 1, 0.5, 0, "v1")]}, labels)
    out = soft_nms_predictions(preds)
    assert list(out.results) == ["v1", "v2"]
    # same segment, different labels: no suppression across classes
    assert [d.label for d in out.results["v2"]] == [0, 1]
    assert [d.score for d in out.results["v2"]] == [0.8, 0.9]


def test_merge_identity_and_concat():
    a = PredictionSet({"v": [det(0, 1, 0.5)]})
    b = PredictionSet({"v": [det(2, 3, 0.4)], "w": [det(0, 1, 0.2, vid="w")]})
    assert merge_detections([a], [1.0]) == a
    m = merge_detections([a, b], [1, 1])
    assert [d.score for d in m.results["v"]] == [0.5, 0.4]
    assert list(m.results) == ["v", "w"]


def test_merge_weights_normalized_by_max():
    a = PredictionSet({"v": [det(0, 1, 0.5)]})
    b = PredictionSet({"v": [det(2, 3, 0.4), det(4, 5, 0.2)]})
    m = merge_detections([a, b], [2, 1])
    assert [d.score for d in m.results["v"]] == [0.5, 0.2, 0.1]
    with pytest.raises(TadError):
        merge_detections([a, b], [0, 0])


def vcs(p, vid="v"):
    return VideoClassScores(vid, p)


def test_ensemble_class_scores():
    a, b = vcs([0.6, 0.4]), vcs([0.2, 0.8])
    np.testing.assert_array_equal(ensemble_class_scores([a, b], [0, 1]).probs, b.probs)
    np.testing.assert_allclose(ensemble_class_scores([a, b], [1, 1]).probs, [0.4, 0.6], atol=1e-15)
    np.testing.assert_allclose(ensemble_class_scores([vcs([1, 0]), vcs([0, 1])], [3, 1]).probs,
                               [0.75, 0.25], atol=1e-15)
    with pytest.raises(TadError):
        ensemble_class_scores([a, vcs([0.1, 0.2, 0.7])], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_ensemble_argmax_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    scores = [vcs(rng.dirichlet(np.ones(6))) for _ in range(3)]
    w = rng.uniform(0.1, 2, 3)
    base = ensemble_class_scores(scores, w).probs
    scaled = ensemble_class_scores(scores, c * w).probs
    assert np.argmax(base) == np.argmax(scaled)
    assert abs(base.sum() - 1) < 1e-12


def test_topk_accuracy():
    perfect = [vcs(np.eye(4)[i], f"v{i}") for i in range(4)]
    truth = {f"v{i}": i for i in range(4)}
    assert topk_accuracy(perfect, truth, 1) == 100.0
    uniform = [vcs(np.full(5, 0.2), "u")]
    assert topk_accuracy(uniform, {"u": 4}, 1) == 0.0
    assert topk_accuracy(uniform, {"u": 0}, 1) == 100.0
    three = [vcs([0.9, 0.1], "a"), vcs([0.2, 0.8], "b"), vcs([0.7, 0.3], "c")]
    assert topk_accuracy(three, {"a": 0, "b": 1, "c": 1}, 1) == pytest.approx(200 / 3)
    with pytest.raises(TadError):
        topk_accuracy(three, {"a": 0}, 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_topk_monotone_in_k(seed):
    rng = np.random.default_rng(seed)
    scores = [vcs(rng.dirichlet(np.ones(8)), str(i)) for i in range(20)]
    truth = {str(i): int(rng.integers(8)) for i in range(20)}
    accs = [topk_accuracy(scores, truth, k) for k in range(1, 9)]
    assert accs == sorted(accs) and accs[-1] == 100.0


def test_assign_labels():
    props = [ScoredDetection("v", Segment(0, 1), None, 0.5)]
    out = assign_labels(props, vcs([0.1, 0.6, 0.3]), top_n=2)
    assert [(d.label, d.score) for d in out] == [(1, 0.3), (2, 0.15)]


def test_load_ensemble_spec(write_json):
    labels = LabelSpace(("a", "b"))
    path = write_json("e.json", {"models": [{"predictions": "x.json", "weight": 2}, {"predictions": "y.json"}],
                                 "nms": {"sigma": 0.7, "score_floor": 0.01, "per_category": {"b": {"sigma": 0.2}}}})
    spec = load_ensemble_spec(path, labels)
    assert spec.predictions == ("x.json", "y.json") and spec.weights == (2.0, 1.0)
    assert spec.nms.for_label(0) == (0.7, 0.01)
    assert spec.nms.for_label(1) == (0.2, 0.01)
    bad = write_json("f.json", {"models": [{"predictions": "x"}], "nms": {"per_category": {"zz": {}}}})
    with pytest.raises(UnknownLabelError):
        load_ensemble_spec(bad, labels)


def test_one_hot_class_ensemble_is_bitwise_for_inexact_sums():
    rng = np.random.default_rng(9)
    scores = [VideoClassScores("v", rng.dirichlet(np.ones(7))) for _ in range(3)]
    for j in range(3):
        w = np.zeros(3)
        w[j] = 2.5
        assert ensemble_class_scores(scores, w).probs.tobytes() == scores[j].probs.tobytes()
