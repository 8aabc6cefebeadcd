import math
import warnings

import numpy as np
import pytest
from sklearn.base import clone

from gamma.detector import (FunctionDetector, HardLabelDetector, SurrogateDetector,
                            TrainingConfig, UnreachableFprWarning,
                            choose_threshold, empirical_fpr, hard_label_wrap,
                            is_evasive, label, train_surrogate)
from gamma.exceptions import DegenerateData, EmptyInput
from gamma.features import byte_histogram


def test_fixture_classes_separable_by_centroids(benign_bytes, malware_bytes):
    # oracle independent of the model: nearest centroid on byte histograms
    H = lambda xs: np.array([byte_histogram(np.frombuffer(x, np.uint8)) for x in xs])
    hb, hm = H(benign_bytes[:100]), H(malware_bytes)
    cb, cm = H(benign_bytes[100:]).mean(0), hm.mean(0)
    pred_b = np.linalg.norm(hb - cm, axis=1) < np.linalg.norm(hb - cb, axis=1)
    pred_m = np.linalg.norm(hm - cm, axis=1) < np.linalg.norm(hm - cb, axis=1)
    acc = (np.sum(~pred_b) + np.sum(pred_m)) / (len(hb) + len(hm))
    assert acc >= 0.95


def test_surrogate_accuracy(surrogate, benign_bytes, malware_bytes):
    assert surrogate.training_accuracy_ >= 0.95
    # held-out: benign files beyond the training slice and the target malware
    X = benign_bytes[100:150] + malware_bytes
    y = np.r_[np.zeros(50), np.ones(len(malware_bytes))]
    assert np.mean((surrogate.predict_proba(X)[:, 1] >= 0.5) == y) >= 0.95


def test_threshold_fpr(surrogate, validation_benign, malware_bytes):
    theta = surrogate.threshold
    assert empirical_fpr(surrogate, validation_benign, theta) <= 0.05
    assert np.mean([label(surrogate, x) for x in malware_bytes]) >= 0.95


def test_choose_threshold_brute_force(rng):
    for trial in range(30):
        scores = rng.random(rng.integers(5, 40)).round(rng.integers(1, 3))
        det = FunctionDetector(lambda x: scores[x[0]], 0.5)
        xs = [bytes([i]) for i in range(len(scores))]
        target = float(rng.choice([0.0, 0.05, 0.1, 0.25, 0.5, 1.0]))
        if target and target < 1 / len(scores):
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnreachableFprWarning)
            theta = choose_threshold(det, xs, target)
        fpr = lambda t: np.mean(scores >= t)
        assert fpr(theta) <= target
        # no smaller candidate threshold also meets the target
        candidates = np.r_[scores, np.nextafter(scores, np.inf)]
        better = [t for t in candidates if t < theta and fpr(t) <= target]
        assert not better


def test_unreachable_fpr_warns():
    det = FunctionDetector(lambda x: x[0] / 10)
    xs = [bytes([i]) for i in range(10)]
    with pytest.warns(UnreachableFprWarning):
        theta = choose_threshold(det, xs, 0.01)
    assert theta > 0.9 and empirical_fpr(det, xs, theta) == 0.0
    with pytest.raises(ValueError):
        choose_threshold(det, [], 0.1)


def test_hard_label_wrapper(surrogate, benign_bytes, malware_bytes):
    hard = hard_label_wrap(surrogate)
    assert isinstance(hard, HardLabelDetector)
    assert math.isinf(hard.threshold)
    benign = next(x for x in benign_bytes if surrogate.query(x) < surrogate.threshold)
    assert hard.query(benign) == 0.0 and is_evasive(hard, 0.0)
    assert hard.query(malware_bytes[0]) == math.inf
    assert not is_evasive(hard, math.inf)


def test_json_round_trip(surrogate, tmp_path, malware_bytes):
    path = surrogate.save(tmp_path / "m.json")
    again = SurrogateDetector.load(path)
    assert again.threshold == surrogate.threshold
    np.testing.assert_array_equal(again.coef_, surrogate.coef_)
    assert again.query(malware_bytes[0]) == surrogate.query(malware_bytes[0])
    doc = surrogate.to_json()
    assert set(doc) >= {"feature_layout_version", "weights", "bias", "theta",
                        "training_config"}


def test_estimator_api(surrogate):
    params = surrogate.get_params()
    assert params["l2"] == 3.0 and params["threshold"] == surrogate.threshold
    fresh = clone(surrogate)
    assert not hasattr(fresh, "coef_")
    with pytest.raises(Exception):
        fresh.query(b"MZ")


def test_fit_on_feature_matrix_and_degenerate_input():
    rng = np.random.default_rng(0)
    F = np.vstack([rng.normal(0, 1, (30, 5)), rng.normal(3, 1, (30, 5))])
    F[:, 4] = 7.0  # constant column is dropped, not an error
    y = np.r_[np.zeros(30), np.ones(30)]
    m = SurrogateDetector(l2=0.01).fit(F, y)
    assert m.training_accuracy_ >= 0.95
    assert m.coef_[4] == 0.0 and list(m.dropped_features_) == [4]
    with pytest.raises(DegenerateData):
        SurrogateDetector().fit(F, np.zeros(60))
    with pytest.raises(ValueError):
        SurrogateDetector().fit(F, y[:-1])


def test_train_surrogate_requires_both_classes(benign_bytes):
    with pytest.raises(DegenerateData):
        train_surrogate(benign_bytes[:3], [])
    with pytest.raises(EmptyInput):
        train_surrogate([b""], benign_bytes[:1], TrainingConfig(epochs=1))


def test_large_l2_stays_finite(benign_bytes, training_malware):
    m = train_surrogate(benign_bytes[:10], training_malware[:10],
                        TrainingConfig(l2=50.0, epochs=50))
    assert np.all(np.isfinite(m.coef_))
