"""Black-box detectors: the scored function an attack queries.

Anything with a ``threshold`` attribute and a ``query(bytes) -> float``
method is a detector; a program is flagged when ``query(x) >= threshold``.
Hard-label detectors answer 0.0 for benign and ``math.inf`` for malicious.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateData
from .features import (ENTROPY_STEP, ENTROPY_WINDOW, HASH_WIDTH,
                       PEFeatureExtractor, layout_version)
from .utils.validation import check_byte_samples, check_bytes

logger = logging.getLogger(__name__)

INFINITE_SCORE = math.inf

# thresholds reported for the pretrained detectors; reference only
REFERENCE_THRESHOLDS = {"gbdt": 0.8336, "malconv": 0.5}


@runtime_checkable
class Detector(Protocol):
    threshold: float

    def query(self, data: bytes) -> float:
        ...


def label(detector: Detector, data: bytes) -> int:
    return int(detector.query(data) >= detector.threshold)


def is_evasive(detector: Detector, score: float) -> bool:
    return score < detector.threshold


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.5
    epochs: int = 400
    l2: float = 3.0
    seed: int = 0


class SurrogateDetector(ClassifierMixin, BaseEstimator):
    """Logistic-linear malware scorer over static PE features.

    A reproducible stand-in for a pretrained static detector. Features are
    standardized during training and the scaling is folded back into
    ``coef_`` and ``intercept_``, so a fitted model is just
    ``sigmoid(coef_ @ phi(x) + intercept_)``.

    Parameters
    ----------
    learning_rate : float
        Step size of full-batch gradient descent on the mean log-loss.
    epochs : int
        Number of gradient steps.
    l2 : float
        L2 penalty on the standardized weights.
    random_state : int
        Seed for the weight initialization.
    threshold : float
        Decision threshold on the malicious-class probability.
    """

    def __init__(self, learning_rate=0.5, epochs=400, l2=3.0, random_state=0,
                 threshold=0.5, window=ENTROPY_WINDOW, step=ENTROPY_STEP,
                 hash_width=HASH_WIDTH):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.random_state = random_state
        self.threshold = threshold
        self.window = window
        self.step = step
        self.hash_width = hash_width

    @property
    def extractor(self) -> PEFeatureExtractor:
        return PEFeatureExtractor(self.window, self.step, self.hash_width)

    def _features(self, X) -> np.ndarray:
        if isinstance(X, np.ndarray) and X.ndim == 2 and X.dtype != np.uint8:
            return X.astype(np.float64, copy=False)
        return self.extractor.transform(check_byte_samples(X))

    def fit(self, X, y):
        """Fit on raw programs (or a precomputed feature matrix) and labels."""
        F = self._features(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        if F.shape[0] != y.shape[0]:
            raise ValueError(f"X has {F.shape[0]} rows, y has {y.shape[0]}")
        for cls in (0, 1):
            if not np.any(y == cls):
                raise DegenerateData(f"no samples of class {cls}")

        mean = F.mean(axis=0)
        std = F.std(axis=0)
        keep = std > 0  # constant columns are dropped, not an error
        scale = np.where(keep, std, 1.0)
        Z = np.where(keep, (F - mean) / scale, 0.0)

        rng = np.random.default_rng(self.random_state)
        w = rng.normal(0.0, 0.01, F.shape[1]) * keep
        b = 0.0
        n = len(y)
        # damped so that a large l2 cannot make the iteration diverge
        lr = self.learning_rate / (1.0 + self.l2)
        for _ in range(self.epochs):
            p = _sigmoid(Z @ w + b)
            err = p - y
            w -= lr * ((Z.T @ err) / n + self.l2 * w)
            b -= lr * err.mean()

        self.coef_ = np.where(keep, w / scale, 0.0)
        self.intercept_ = float(b - np.dot(self.coef_, mean))
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = F.shape[1]
        self.dropped_features_ = np.flatnonzero(~keep)
        self.training_accuracy_ = float(np.mean(
            (self._proba_from_features(F) >= 0.5) == (y == 1)))
        logger.info("surrogate trained: accuracy %.4f, %d constant columns",
                    self.training_accuracy_, len(self.dropped_features_))
        return self

    def _proba_from_features(self, F):
        return _sigmoid(F @ self.coef_ + self.intercept_)

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        return self._features(X) @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(int)

    def query(self, data) -> float:
        """Malicious-class probability of one raw program."""
        check_is_fitted(self, "coef_")
        phi = self.extractor.transform_one(check_bytes(data))
        return float(_sigmoid(np.dot(phi, self.coef_) + self.intercept_))

    # -- persistence -------------------------------------------------------

    def to_json(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "feature_layout_version": layout_version(self.window, self.step,
                                                     self.hash_width),
            "weights": self.coef_.tolist(),
            "bias": self.intercept_,
            "theta": self.threshold,
            "training_config": asdict(TrainingConfig(
                self.learning_rate, self.epochs, self.l2, self.random_state)),
            "training_accuracy": getattr(self, "training_accuracy_", None),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json()) + "\n")
        return path

    @classmethod
    def from_json(cls, doc: dict) -> "SurrogateDetector":
        version = doc["feature_layout_version"]
        try:
            _, w, p, h = version.split("/")
            window, step, hash_width = int(w[1:]), int(p[1:]), int(h[1:])
        except ValueError:
            raise ValueError(f"unknown feature layout {version!r}") from None
        cfg = doc.get("training_config") or {}
        model = cls(learning_rate=cfg.get("learning_rate", 0.5),
                    epochs=cfg.get("epochs", 400), l2=cfg.get("l2", 3.0),
                    random_state=cfg.get("seed", 0), threshold=doc["theta"],
                    window=window, step=step, hash_width=hash_width)
        model.coef_ = np.asarray(doc["weights"], dtype=np.float64)
        model.intercept_ = float(doc["bias"])
        model.classes_ = np.array([0, 1])
        model.n_features_in_ = len(model.coef_)
        if doc.get("training_accuracy") is not None:
            model.training_accuracy_ = doc["training_accuracy"]
        return model

    @classmethod
    def load(cls, path) -> "SurrogateDetector":
        return cls.from_json(json.loads(Path(path).read_text()))


def train_surrogate(benign: Sequence[bytes], malicious: Sequence[bytes],
                    config: TrainingConfig = TrainingConfig()) -> SurrogateDetector:
    """Fit a :class:`SurrogateDetector` on two sets of raw programs."""
    if len(benign) == 0 or len(malicious) == 0:
        raise DegenerateData("both the benign and the malicious set must be "
                             "non-empty")
    X = list(benign) + list(malicious)
    y = np.r_[np.zeros(len(benign)), np.ones(len(malicious))]
    model = SurrogateDetector(learning_rate=config.learning_rate,
                              epochs=config.epochs, l2=config.l2,
                              random_state=config.seed)
    return model.fit(X, y)


class UnreachableFprWarning(UserWarning):
    pass


def choose_threshold(detector: Detector, benign_validation: Sequence[bytes],
                     target_fpr: float) -> float:
    """Smallest threshold whose empirical false-positive rate is <= target.

    The FPR of a threshold t is the fraction of benign scores >= t, a step
    function that drops just above each observed score; the candidates are
    therefore the minimum score and the next float above every score.
    When ``target_fpr`` is finer than ``1 / len(benign_validation)`` the
    result sits just above the maximum score and an
    :class:`UnreachableFprWarning` is emitted.
    """
    if len(benign_validation) == 0:
        raise ValueError("benign validation set is empty")
    if not 0.0 <= target_fpr <= 1.0:
        raise ValueError("target_fpr must lie in [0, 1]")
    scores = np.sort(np.array([detector.query(x) for x in benign_validation]))
    n = len(scores)
    if target_fpr < 1.0 / n:
        warnings.warn(f"target FPR {target_fpr} is below the 1/{n} granularity "
                      "of the validation set", UnreachableFprWarning,
                      stacklevel=2)
        return float(np.nextafter(scores[-1], np.inf))
    if target_fpr >= 1.0:
        return float(scores[0])
    for s in np.unique(scores):
        theta = float(np.nextafter(s, np.inf))
        fpr = np.count_nonzero(scores >= theta) / n
        if fpr <= target_fpr:
            return theta
    return float(np.nextafter(scores[-1], np.inf))


def empirical_fpr(detector: Detector, benign: Sequence[bytes], theta: float) -> float:
    return float(np.mean([detector.query(x) >= theta for x in benign]))


class HardLabelDetector:
    """Expose only the verdict of ``detector``: 0.0 if benign, inf otherwise."""

    threshold = INFINITE_SCORE

    def __init__(self, detector: Detector):
        self.detector = detector

    def query(self, data) -> float:
        score = self.detector.query(data)
        return 0.0 if score < self.detector.threshold else INFINITE_SCORE

    def __repr__(self):
        return f"HardLabelDetector({self.detector!r})"


def hard_label_wrap(detector: Detector) -> HardLabelDetector:
    return HardLabelDetector(detector)


class FunctionDetector:
    """Adapt a plain ``bytes -> float`` callable to the detector protocol."""

    def __init__(self, fn: Callable[[bytes], float], threshold: float = 0.5):
        self.fn = fn
        self.threshold = threshold

    def query(self, data) -> float:
        return float(self.fn(data))
