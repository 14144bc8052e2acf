"""Byte masking and sliding-window planning.

Inputs are token sequences: integer arrays with values in [0, 256], where
0..255 are raw byte values and 256 is the reserved PAD token.  Masking a
window replaces its tokens with PAD in place of the original bytes; window
planning converts percentage-based mask/stride settings into concrete byte
counts and a start list that always covers the whole sequence.

Percentages are kept as exact rationals.  Stride percentages well below 1
are legitimate settings (down to one-byte strides on megabyte inputs), and
ceil() on a binary-float product miscounts exactly at those scales:
ceil(1e6 * 0.0001 / 100) is 2 under float arithmetic but 1 under exact
arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Union

import numpy as np

PAD_TOKEN = 256
VOCAB_SIZE = 257

PercentLike = Union[int, float, str, Fraction]


def as_percent(value: PercentLike) -> Fraction:
    """Normalize a percentage to an exact Fraction.

    Floats are routed through their decimal repr so a literal like 0.0001
    means 1/10000, not the nearest binary float.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as a percentage")


def as_tokens(data) -> np.ndarray:
    """Coerce bytes or an integer sequence to a 1-D int32 token array."""
    if isinstance(data, (bytes, bytearray, memoryview)):
        return np.frombuffer(bytes(data), dtype=np.uint8).astype(np.int32)
    arr = np.asarray(data)
    if arr.ndim != 1:
        raise ValueError(f"token array must be 1-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"token array must be integer, got dtype {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() >= VOCAB_SIZE):
        raise ValueError("token values must lie in [0, 256]")
    return arr.astype(np.int32, copy=False)


@dataclass(frozen=True)
class DefenseConfig:
    """Masking-ensemble settings: mask/stride as percent of input length,
    plus the vote threshold (label malicious iff >= threshold windows do)."""

    mask_percent: PercentLike = 50
    stride_percent: PercentLike = 1
    threshold: int = 1

    def __post_init__(self):
        m = as_percent(self.mask_percent)
        s = as_percent(self.stride_percent)
        if not 1 <= m < 100:
            raise ValueError(f"mask_percent must be in [1, 100), got {m}")
        if not 0 < s < m:
            raise ValueError(
                f"stride_percent must be in (0, mask_percent), got {s}"
            )
        if not (isinstance(self.threshold, (int, np.integer)) and self.threshold >= 1):
            raise ValueError(f"threshold must be an integer >= 1, got {self.threshold}")
        object.__setattr__(self, "mask_percent", m)
        object.__setattr__(self, "stride_percent", s)
        object.__setattr__(self, "threshold", int(self.threshold))


@dataclass(frozen=True, eq=False)
class WindowSet:
    """Concrete mask plan for one input length.

    ``starts`` always begins at 0 and ends at L - mask_len, so the union of
    windows covers every byte.  ``n_nominal`` is the stride count
    ceil((L - m) / s); the start list has n_nominal + 1 entries because the
    final window is clamped to end exactly at L.
    """

    mask_len: int
    stride_len: int
    starts: np.ndarray
    n_nominal: int

    def __post_init__(self):
        s = np.asarray(self.starts, dtype=np.int64)
        s.setflags(write=False)
        object.__setattr__(self, "starts", s)

    @property
    def num_windows(self) -> int:
        return int(self.starts.size)


def mask_len_bytes(length: int, mask_percent: PercentLike) -> int:
    """ceil(L * M / 100), clamped to L."""
    m = math.ceil(Fraction(length) * as_percent(mask_percent) / 100)
    return min(m, length)


def stride_len_bytes(length: int, stride_percent: PercentLike) -> int:
    """ceil(L * S / 100); at least 1 for any positive percentage."""
    return math.ceil(Fraction(length) * as_percent(stride_percent) / 100)


def plan_windows(length: int, cfg: DefenseConfig) -> WindowSet:
    """Lay out mask windows of m = ceil(L*M/100) bytes every s = ceil(L*S/100)
    bytes, with the last start clamped to L - m.

    Degenerate case: if m >= L a single full-cover window at 0 is returned
    with mask_len clamped to L.
    """
    length = int(length)
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    m = math.ceil(Fraction(length) * cfg.mask_percent / 100)
    s = math.ceil(Fraction(length) * cfg.stride_percent / 100)
    if m >= length:
        return WindowSet(mask_len=length, stride_len=s,
                         starts=np.array([0], dtype=np.int64), n_nominal=0)
    n = -((m - length) // s)  # ceil((L - m) / s) in integer arithmetic
    starts = np.arange(n + 1, dtype=np.int64) * s
    starts[-1] = length - m  # (n-1)*s < L-m <= n*s, so this only clamps
    return WindowSet(mask_len=m, stride_len=s, starts=starts, n_nominal=n)


def mask_bytes(x: np.ndarray, start: int, length: int) -> np.ndarray:
    """Return a copy of ``x`` with ``x[start:start+length]`` replaced by PAD."""
    n = len(x)
    if length < 1 or length > n:
        raise ValueError(f"mask length must be in [1, {n}], got {length}")
    if start < 0 or start + length > n:
        raise ValueError(
            f"mask window [{start}, {start + length}) out of range for length {n}"
        )
    out = np.array(x, dtype=np.int32, copy=True)
    out[start:start + length] = PAD_TOKEN
    return out


def masked_versions(x: np.ndarray, starts: Iterable[int], mask_len: int) -> np.ndarray:
    """Stack mask_bytes(x, a, mask_len) for every start a into an (n, L) matrix."""
    x = as_tokens(x)
    a = np.asarray(list(starts) if not isinstance(starts, np.ndarray) else starts,
                   dtype=np.int64).reshape(-1, 1)
    if a.size == 0:
        return np.empty((0, len(x)), dtype=np.int32)
    if a.min() < 0 or (a + mask_len).max() > len(x):
        raise ValueError("mask window out of range")
    idx = np.arange(len(x), dtype=np.int64)[None, :]
    inside = (idx >= a) & (idx < a + mask_len)
    return np.where(inside, np.int32(PAD_TOKEN), x[None, :])


def random_mask_start(length: int, mask_len: int, rng: np.random.Generator) -> int:
    """Uniform mask start in [0, L - m] inclusive."""
    if mask_len > length:
        raise ValueError(f"mask_len {mask_len} exceeds length {length}")
    return int(rng.integers(0, length - mask_len, endpoint=True))


def split_chunks(length: int, k: int) -> list:
    """Bounds of k contiguous chunks covering [0, length); the first
    length mod k chunks are one byte longer than the rest."""
    if k < 1:
        raise ValueError(f"chunk count must be >= 1, got {k}")
    if k > length:
        raise ValueError(f"cannot split {length} bytes into {k} chunks")
    base, extra = divmod(length, k)
    bounds = []
    lo = 0
    for i in range(k):
        hi = lo + base + (1 if i < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def random_deletion(x: np.ndarray, delete_prob: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Keep each byte independently with probability 1 - delete_prob,
    preserving order.  An empty survivor collapses to a single PAD token."""
    if not 0.0 <= delete_prob <= 1.0:
        raise ValueError(f"delete_prob must be in [0, 1], got {delete_prob}")
    keep = rng.random(len(x)) >= delete_prob
    out = np.asarray(x, dtype=np.int32)[keep]
    if out.size == 0:
        return np.array([PAD_TOKEN], dtype=np.int32)
    return out
