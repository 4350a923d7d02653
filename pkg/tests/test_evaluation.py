import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from s4sits.errors import LabelOutOfRange, MissingCloudMask, ShapeMismatch
from s4sits.evaluation import (
    MetricsReport,
    ablation_table,
    accumulate_confusion,
    assign_bin,
    cloud_report,
    evaluate,
    miou,
    table_from_json,
)
from s4sits.sits_core import SitsPair, cloud_cover_ratio
from s4sits.synthetic import WorldConfig, generate_sample


def test_perfect_prediction_is_diagonal():
    y = np.array([[0, 1, 2], [2, 1, 0]])
    cm = accumulate_confusion(y, y, 3)
    assert np.array_equal(cm, np.diag([2, 2, 2]))


def test_all_ignored_leaves_cm():
    cm = np.arange(4).reshape(2, 2)
    out = accumulate_confusion(np.zeros((2, 2)), np.full((2, 2), -1), 2, cm=cm.copy())
    assert np.array_equal(out, cm)


def test_hand_counted_2x2():
    cm = accumulate_confusion([[0, 1], [1, 1]], [[0, 0], [1, 1]], 2)
    assert cm.tolist() == [[1, 1], [0, 2]]


def test_confusion_errors():
    with pytest.raises(LabelOutOfRange):
        accumulate_confusion([[0]], [[3]], 2)
    with pytest.raises(LabelOutOfRange):
        accumulate_confusion([[5]], [[0]], 2)
    with pytest.raises(ShapeMismatch):
        accumulate_confusion(np.zeros((2, 2)), np.zeros((2, 3)), 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_confusion_matches_loop(seed, K):
    rng = np.random.default_rng(seed)
    label = rng.integers(-1, K, size=(5, 4))
    pred = rng.integers(0, K, size=(5, 4))
    assert np.array_equal(accumulate_confusion(pred, label, K), oracles.confusion(pred, label, K))


def test_miou_values():
    assert miou(np.diag([3, 1, 2])).miou == 1.0
    r = miou(np.array([[1, 1], [0, 2]]))
    assert r.per_class_iou == pytest.approx([0.5, 2 / 3])
    assert r.miou == pytest.approx(7 / 12, abs=1e-12)
    absent = miou(np.array([[1, 0, 1], [0, 0, 0], [0, 0, 2]]))
    assert absent.per_class_iou[1] is None
    assert absent.miou == pytest.approx((0.5 + 2 / 3) / 2)
    assert absent.n_pixels_evaluated == 4


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_miou_range_and_unit_iff_diagonal(seed, K):
    rng = np.random.default_rng(seed)
    cm = rng.integers(0, 4, size=(K, K)) * (rng.uniform(size=(K, K)) < 0.5)
    if rng.uniform() < 0.3:
        cm = np.diag(np.diag(cm))
    m = miou(cm).miou
    assert 0.0 <= m <= 1.0
    diagonal = np.count_nonzero(cm - np.diag(np.diag(cm))) == 0 and cm.sum() > 0
    assert (m == 1.0) == diagonal


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_additivity(seed):
    rng = np.random.default_rng(seed)
    preds = [rng.integers(0, 4, size=(3, 3)) for _ in range(3)]
    labels = [rng.integers(-1, 4, size=(3, 3)) for _ in range(3)]
    whole = accumulate_confusion(np.concatenate(preds), np.concatenate(labels), 4)
    parts = sum(accumulate_confusion(p, y, 4) for p, y in zip(preds, labels))
    assert np.array_equal(whole, parts)


def _pairs(n, rate=0.4):
    return [generate_sample(WorldConfig(height=8, width=8, t_optical=6, t_radar=6, cloud_rate=rate), i)
            for i in range(n)]


def _noisy_predictor(seed):
    def fn(pair):
        rng = np.random.default_rng([int(pair.location_id[3:]), seed])
        flip = rng.uniform(size=pair.label.shape) < 0.3
        return np.where(flip, rng.integers(0, 5, size=pair.label.shape), pair.label)
    return fn


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sample_order_invariance(seed):
    data = _PAIRS
    order = np.random.default_rng(seed).permutation(len(data))
    fn = _noisy_predictor(1)
    a = cloud_report(fn, data, 5)
    b = cloud_report(fn, [data[i] for i in order], 5)
    assert np.array_equal(a.confusion_matrix, b.confusion_matrix)
    assert a.miou == b.miou and a.cloud_bins == b.cloud_bins


_PAIRS = _pairs(10)


def test_evaluate_perfect():
    report = evaluate(lambda p: p.label, _PAIRS, 5)
    assert report.miou == 1.0 and report.n_pixels_evaluated == 10 * 64


@pytest.mark.parametrize("ratio, expected", [(0.0, 0), (0.049, 0), (0.05, 1), (0.15, 2), (0.25, 3), (1.0, 3)])
def test_assign_bin(ratio, expected):
    assert assign_bin(ratio, (0, 0.05, 0.15, 0.25, 1.0)) == expected


def test_cloud_free_dataset_single_bin():
    report = cloud_report(lambda p: p.label, _pairs(4, rate=0.0), 5)
    assert [b["n_samples"] for b in report.cloud_bins] == [4, 0, 0, 0]
    assert report.cloud_bins[0]["miou"] == 1.0 and report.cloud_bins[1]["miou"] is None


def test_bins_partition_dataset():
    data = _pairs(30, rate=0.5)
    report = cloud_report(_noisy_predictor(0), data, 5)
    assert sum(b["n_samples"] for b in report.cloud_bins) == 30
    # each bin's pixels plus the others add up to the overall confusion
    ratios = [cloud_cover_ratio(p.cloud_mask) for p in data]
    expected = np.bincount([assign_bin(r, (0, 0.05, 0.15, 0.25, 1.0)) for r in ratios], minlength=4)
    assert [b["n_samples"] for b in report.cloud_bins] == expected.tolist()


def test_baseline_deltas():
    report = cloud_report(lambda p: p.label, _PAIRS, 5, baseline_fn=_noisy_predictor(2))
    for b in report.cloud_bins:
        if b["n_samples"]:
            assert b["miou_delta"] == pytest.approx(b["miou"] - b["baseline_miou"])
            assert b["miou_delta"] > 0


def test_missing_cloud_mask():
    p = _PAIRS[0]
    bare = SitsPair(p.location_id, p.radar, p.optical, label=p.label)
    with pytest.raises(MissingCloudMask):
        cloud_report(lambda q: q.label, [bare], 5)


def test_report_json():
    report = cloud_report(lambda p: p.label, _PAIRS, 5)
    data = json.loads(json.dumps(report.to_json()))
    assert data["miou"] == 1.0 and len(data["cloud_bins"]) == 4


def test_ablation_table():
    text, js = ablation_table([("zeta", 0.5), ("alpha", MetricsReport(np.eye(2), [1.0, 1.0], 1.0, 2))])
    rows = text.splitlines()[2:]
    assert [r.split()[0] for r in rows] == ["alpha", "zeta"]
    assert table_from_json(js) == text
    assert json.loads(js) == {"alpha": 1.0, "zeta": 0.5}
    single, _ = ablation_table([("only", 0.25)])
    assert len(single.splitlines()) == 3
    with pytest.raises(ValueError):
        ablation_table([])
