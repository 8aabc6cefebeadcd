"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numbers
from typing import Sequence

import numpy as np

from ..exceptions import EmptyInput, VectorLengthMismatch


def check_manipulation_vector(s, k: int) -> np.ndarray:
    """Return ``s`` as a float64 vector of length ``k`` with values in [0, 1]."""
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.shape[0] != k:
        raise VectorLengthMismatch(
            f"manipulation vector has {arr.shape[0]} elements, corpus has {k}")
    if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 \
            or arr.max(initial=0.0) > 1.0:
        raise ValueError("manipulation vector elements must lie in [0, 1]")
    return arr


def check_bytes(x, name: str = "input") -> bytes:
    """Coerce a bytes-like object and reject empty input."""
    if isinstance(x, (bytes, bytearray, memoryview)):
        data = bytes(x)
    elif isinstance(x, np.ndarray) and x.dtype == np.uint8:
        data = x.tobytes()
    else:
        raise TypeError(f"{name} must be bytes-like, got {type(x).__name__}")
    if not data:
        raise EmptyInput(f"{name} is empty")
    return data


def check_byte_samples(X, name: str = "X") -> Sequence[bytes]:
    """Validate a sequence of raw programs, as estimators receive them."""
    if isinstance(X, (bytes, bytearray)):
        raise TypeError(f"{name} must be a sequence of byte strings, "
                        "not a single byte string")
    samples = [check_bytes(x, f"{name}[{i}]") for i, x in enumerate(X)]
    if not samples:
        raise EmptyInput(f"{name} contains no samples")
    return samples


def check_scalar(x, name: str, *, lo=None, hi=None, lo_open=False,
                 hi_open=False, integral=False):
    """Range-check a hyperparameter; mirrors ``sklearn.utils.check_scalar``."""
    kind = numbers.Integral if integral else numbers.Real
    if not isinstance(x, kind) or isinstance(x, bool):
        raise TypeError(f"{name} must be {'an int' if integral else 'a real'}, "
                        f"got {x!r}")
    if lo is not None and (x <= lo if lo_open else x < lo):
        raise ValueError(f"{name}={x!r} must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (x >= hi if hi_open else x > hi):
        raise ValueError(f"{name}={x!r} must be {'<' if hi_open else '<='} {hi}")
    return x
