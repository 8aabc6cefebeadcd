"""Static features of a raw executable.

Five feature groups: byte histogram, byte-entropy
histogram, string statistics, hashed section information and general file
information. Layout (585 columns with the default parameters)::

    [0, 256)    byte histogram (frequencies, sums to 1)
    [256, 512)  byte-entropy histogram, 16 entropy bins x 16 byte buckets
    [512, 518)  strings: count, mean length, "c:\\", "hkey", "http", "https"
    [518, 582)  section info hashed into ``hash_width`` bins
    [582, 585)  general: log1p(file size), section count, log1p(overlay size)

Section hashing uses 32-bit FNV-1a over the Latin-1 bytes of a key, reduced
modulo ``hash_width``: ``h = 0x811C9DC5; for b in key: h = ((h ^ b) *
0x01000193) mod 2**32; bin = h % hash_width``. Every section contributes
four keys: ``"<name>"`` (value 1), ``"<name>:size"`` (log1p raw size),
``"<name>:entropy"`` (bits) and ``"<name>:vsize"`` (log1p virtual size).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import GammaError
from .pe import parse
from .utils.validation import check_byte_samples, check_bytes

ENTROPY_WINDOW = 2048
ENTROPY_STEP = 1024
HASH_WIDTH = 64
N_STRING_FEATURES = 6
N_GENERAL_FEATURES = 3

_MARKERS = (b"c:\\", b"hkey", b"http", b"https")

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


@lru_cache(maxsize=4096)
def fnv1a_32(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFF
    return h


def layout_version(window=ENTROPY_WINDOW, step=ENTROPY_STEP,
                   hash_width=HASH_WIDTH) -> str:
    return f"gamma-static-v1/w{window}/p{step}/h{hash_width}"


def _entropy_from_counts(counts: np.ndarray, total) -> np.ndarray:
    """Shannon entropy in bits along the last axis."""
    p = counts / np.asarray(total, dtype=np.float64)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(p), 0.0)
    return terms.sum(axis=-1)


def window_entropy(window) -> float:
    """Entropy in bits of the byte distribution of one window."""
    a = np.frombuffer(check_bytes(window, "window"), dtype=np.uint8)
    counts = np.bincount(a, minlength=256).astype(np.float64)
    return float(_entropy_from_counts(counts, len(a)))


@lru_cache(maxsize=8)
def _clog2c(n: int) -> np.ndarray:
    c = np.arange(n + 1, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(c > 0, c * np.log2(c), 0.0)


def byte_histogram(a: np.ndarray) -> np.ndarray:
    counts = np.bincount(a, minlength=256).astype(np.float64)
    return counts / len(a)


def _window_counts(a: np.ndarray, window: int, step: int):
    """256-bin counts for every full window (or the whole input if short)."""
    n = len(a)
    if n < window:
        return np.bincount(a, minlength=256)[None, :], np.array([n])
    n_windows = (n - window) // step + 1
    if window % step == 0:
        # each window is the sum of window // step consecutive blocks
        r = window // step
        n_blocks = n_windows + r - 1
        ids = a[:n_blocks * step].reshape(n_blocks, step).astype(np.int32)
        ids += (np.arange(n_blocks, dtype=np.int32) * 256)[:, None]
        blocks = np.bincount(ids.ravel(), minlength=n_blocks * 256)
        blocks = blocks.reshape(n_blocks, 256)
        csum = np.vstack([np.zeros((1, 256), np.int64), np.cumsum(blocks, axis=0)])
        counts = csum[r:] - csum[:-r]
    else:
        counts = np.stack([np.bincount(a[i * step:i * step + window], minlength=256)
                           for i in range(n_windows)])
    return counts, np.full(n_windows, window)


def byte_entropy_histogram(a: np.ndarray, window=ENTROPY_WINDOW,
                           step=ENTROPY_STEP) -> np.ndarray:
    """Joint histogram of (window entropy, byte value >> 4).

    Each window adds its 16 high-nibble bucket frequencies to the row of its
    entropy bin (``min(int(2 * H), 15)``); the result is divided by the
    number of windows, so it sums to 1.
    """
    counts, lengths = _window_counts(a, window, step)
    # H = log2(L) - sum(c * log2 c) / L, with c*log2(c) looked up
    length = int(lengths[0])
    entropy = np.log2(length) - _clog2c(length)[counts].sum(axis=1) / length
    entropy = np.maximum(entropy, 0.0)
    ebin = np.minimum((entropy * 2).astype(np.int64), 15)
    buckets = counts.reshape(len(counts), 16, 16).sum(axis=2) / lengths[:, None]
    hist = np.zeros((16, 16))
    np.add.at(hist, ebin, buckets)
    return (hist / len(counts)).ravel()


def _printable_runs(a: np.ndarray) -> np.ndarray:
    """Lengths of maximal runs of printable ASCII (0x20-0x7e)."""
    mask = np.empty(len(a) + 2, dtype=np.int8)
    mask[0] = mask[-1] = 0
    mask[1:-1] = (a >= 0x20) & (a <= 0x7E)
    edges = np.flatnonzero(np.diff(mask))
    return edges[1::2] - edges[::2]


def string_features(data: bytes) -> np.ndarray:
    """Count and mean length of printable runs of >= 5 characters, then
    case-insensitive occurrence counts of each marker."""
    runs = _printable_runs(np.frombuffer(data, dtype=np.uint8))
    runs = runs[runs >= 5]
    lowered = data.lower()
    return np.array([len(runs), float(runs.mean()) if len(runs) else 0.0]
                    + [lowered.count(m) for m in _MARKERS], dtype=np.float64)


def section_features(pe, hash_width=HASH_WIDTH) -> np.ndarray:
    out = np.zeros(hash_width)
    if pe is None:
        return out
    for hdr, content in zip(pe.section_headers, pe.section_data):
        name = hdr.name_str
        if content:
            a = np.frombuffer(content, dtype=np.uint8)
            ent = float(_entropy_from_counts(
                np.bincount(a, minlength=256).astype(np.float64), len(a)))
        else:
            ent = 0.0
        for key, value in ((name, 1.0),
                           (name + ":size", np.log1p(hdr.size_of_raw_data)),
                           (name + ":entropy", ent),
                           (name + ":vsize", np.log1p(hdr.virtual_size))):
            out[fnv1a_32(key.encode("latin-1")) % hash_width] += value
    return out


@dataclass
class FeatureVector:
    byte_histogram: np.ndarray
    byte_entropy_histogram: np.ndarray
    string_features: np.ndarray
    section_features: np.ndarray
    general_info: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.byte_histogram, self.byte_entropy_histogram,
                               self.string_features, self.section_features,
                               self.general_info])


def extract_features(data, window=ENTROPY_WINDOW, step=ENTROPY_STEP,
                     hash_width=HASH_WIDTH) -> FeatureVector:
    """Compute the :class:`FeatureVector` of a raw program.

    Total on non-empty input: bytes that do not parse as PE simply get zero
    section features and no overlay.
    """
    data = check_bytes(data)
    a = np.frombuffer(data, dtype=np.uint8)
    try:
        pe = parse(data)
    except GammaError:
        pe = None
    n_sections = len(pe.section_headers) if pe is not None else 0
    overlay = len(pe.overlay) if pe is not None else 0
    general = np.array([np.log1p(len(data)), n_sections, np.log1p(overlay)])
    return FeatureVector(byte_histogram(a),
                         byte_entropy_histogram(a, window, step),
                         string_features(data),
                         section_features(pe, hash_width),
                         general)


def n_features(hash_width=HASH_WIDTH) -> int:
    return 256 + 256 + N_STRING_FEATURES + hash_width + N_GENERAL_FEATURES


class PEFeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from raw programs to feature rows.

    Parameters
    ----------
    window, step : int
        Sliding-window length and stride of the byte-entropy histogram.
    hash_width : int
        Number of bins the section information is hashed into.
    """

    def __init__(self, window=ENTROPY_WINDOW, step=ENTROPY_STEP,
                 hash_width=HASH_WIDTH):
        self.window = window
        self.step = step
        self.hash_width = hash_width

    def fit(self, X, y=None):
        self.n_features_out_ = n_features(self.hash_width)
        return self

    def transform(self, X) -> np.ndarray:
        samples = check_byte_samples(X)
        return np.vstack([self.transform_one(x) for x in samples])

    def transform_one(self, x) -> np.ndarray:
        return extract_features(x, self.window, self.step,
                                self.hash_width).to_array()

    @property
    def layout_version(self) -> str:
        return layout_version(self.window, self.step, self.hash_width)

    def __sklearn_is_fitted__(self):
        return True
