"""Raw-byte gated-convolution classifier with hand-written gradients.

Architecture: a learned 257-token embedding (bytes 0..255 plus PAD), two
parallel strided 1-D convolutions combined by multiplicative sigmoid gating,
global max pooling over windows, and a single dense logit.  Scoring semantics
are "pad to max_len": a sequence scores identically to itself extended with
trailing PAD tokens, because PAD embeds to an all-zero row that is never
updated during training.  Inputs longer than max_len are truncated.

The forward/backward pair is written out explicitly in numpy.  That keeps
training bit-reproducible under a fixed seed, lets the test suite check every
analytic gradient against central finite differences, and makes the exact
masked-scoring fast path (``scores_masked``) checkable against the
mask-then-score route.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .masking import (
    PAD_TOKEN,
    VOCAB_SIZE,
    PercentLike,
    as_tokens,
    mask_bytes,
    mask_len_bytes,
    random_deletion,
    random_mask_start,
    split_chunks,
)

BCE_EPS = 1e-7

MODEL_MAGIC = b"BYSHLD01"
MODEL_VERSION = 1

PARAM_NAMES = ("embedding", "conv_a_w", "conv_a_b",
               "conv_b_w", "conv_b_b", "dense_w", "dense_b")


@dataclass(frozen=True)
class ClassifierConfig:
    embed_dim: int = 8
    num_filters: int = 128
    kernel_len: int = 512
    conv_stride: int = 512
    max_len: int = 1_048_576

    def __post_init__(self):
        if self.embed_dim < 1 or self.num_filters < 1:
            raise ValueError("embed_dim and num_filters must be >= 1")
        if self.kernel_len < 1 or self.conv_stride < 1:
            raise ValueError("kernel_len and conv_stride must be >= 1")
        if self.max_len < self.kernel_len:
            raise ValueError("max_len must be >= kernel_len")

    @property
    def total_windows(self) -> int:
        """Window count over a full max_len-padded sequence."""
        return (self.max_len - self.kernel_len) // self.conv_stride + 1

    def param_shapes(self) -> dict:
        e, f, k = self.embed_dim, self.num_filters, self.kernel_len
        return {
            "embedding": (VOCAB_SIZE, e),
            "conv_a_w": (f, k, e),
            "conv_a_b": (f,),
            "conv_b_w": (f, k, e),
            "conv_b_b": (f,),
            "dense_w": (f,),
            "dense_b": (),
        }


# Full-scale preset from the reference setting, and a desk-scale toy preset
# small enough for CPU training in the test suite.
FULL_CONFIG = ClassifierConfig(embed_dim=8, num_filters=128, kernel_len=512,
                               conv_stride=512, max_len=1_048_576)
TOY_CONFIG = ClassifierConfig(embed_dim=8, num_filters=16, kernel_len=8,
                              conv_stride=8, max_len=16_384)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    out = np.empty(z.shape, dtype=z.dtype)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(score, label, eps: float = BCE_EPS):
    """Elementwise binary cross-entropy with the probability clamped to
    [eps, 1-eps] before the logs.  Gradient code treats the clamp as
    identity; it only guards the log."""
    p = np.clip(np.asarray(score, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(label, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


class ModelFormatError(ValueError):
    """Raised for malformed model files."""


class GatedConvNet:
    """Gated-convolution byte classifier.

    Parameters live in a dict of numpy arrays (see PARAM_NAMES); dtype is
    float32 for trained/serialized models, float64 for gradient checking.
    """

    def __init__(self, config: ClassifierConfig, params: dict):
        shapes = config.param_shapes()
        if set(params) != set(PARAM_NAMES):
            raise ValueError(f"params must have keys {PARAM_NAMES}")
        for name, arr in params.items():
            if tuple(arr.shape) != shapes[name]:
                raise ValueError(
                    f"{name} has shape {arr.shape}, expected {shapes[name]}"
                )
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return self.params["embedding"].dtype

    @classmethod
    def initialized(cls, config: ClassifierConfig, rng: np.random.Generator,
                    dtype=np.float32) -> "GatedConvNet":
        e, f, k = config.embed_dim, config.num_filters, config.kernel_len
        conv_scale = math.sqrt(2.0 / (k * e))
        params = {
            "embedding": rng.normal(0.0, 0.2, (VOCAB_SIZE, e)),
            "conv_a_w": rng.normal(0.0, conv_scale, (f, k, e)),
            "conv_a_b": np.zeros(f),
            "conv_b_w": rng.normal(0.0, conv_scale, (f, k, e)),
            "conv_b_b": np.zeros(f),
            "dense_w": rng.normal(0.0, 1.0 / math.sqrt(f), (f,)),
            "dense_b": np.zeros(()),
        }
        params["embedding"][PAD_TOKEN] = 0.0  # frozen zero row
        return cls(config, {k_: v.astype(dtype) for k_, v in params.items()})

    @classmethod
    def zeros(cls, config: ClassifierConfig, dtype=np.float32) -> "GatedConvNet":
        return cls(config, {name: np.zeros(shape, dtype=dtype)
                            for name, shape in config.param_shapes().items()})

    # ------------------------------------------------------------------ #
    # forward                                                            #
    # ------------------------------------------------------------------ #

    def _batch_layout(self, batch_len: int):
        """Window bookkeeping for rows of (possibly padded) length batch_len.

        Returns (content_windows, has_pad_window, padded_len): the number of
        windows whose start lies inside [0, batch_len), whether the max_len
        padding admits at least one further all-PAD window, and the length
        rows must be PAD-extended to so every used window can be gathered.
        """
        cfg = self.config
        k, s = cfg.kernel_len, cfg.conv_stride
        eff = min(batch_len, cfg.max_len)
        total = cfg.total_windows
        content = min(total, -(-eff // s))
        has_pad = content < total
        used = content + (1 if has_pad else 0)
        return content, has_pad, (used - 1) * s + k

    def _pad_batch(self, rows: Sequence[np.ndarray]) -> np.ndarray:
        batch_len = max(1, max(len(r) for r in rows))
        _, _, padded_len = self._batch_layout(batch_len)
        out = np.full((len(rows), padded_len), PAD_TOKEN, dtype=np.int32)
        for i, r in enumerate(rows):
            n = min(len(r), padded_len)
            out[i, :n] = r[:n]
        return out

    def _windows(self, padded: np.ndarray) -> np.ndarray:
        """View/copy of shape (n, W, K, E) of embedded conv windows."""
        cfg = self.config
        k, s = cfg.kernel_len, cfg.conv_stride
        emb = self.params["embedding"][padded]  # (n, Lp, E)
        n, lp, e = emb.shape
        if s == k and lp % k == 0:
            return emb.reshape(n, lp // k, k, e)
        sw = np.lib.stride_tricks.sliding_window_view(emb, k, axis=1)
        return sw[:, ::s].transpose(0, 1, 3, 2)

    def _forward(self, padded: np.ndarray) -> dict:
        p = self.params
        win = self._windows(padded)  # (n, W, K, E)
        pre_a = np.tensordot(win, p["conv_a_w"], axes=([2, 3], [1, 2])) + p["conv_a_b"]
        pre_b = np.tensordot(win, p["conv_b_w"], axes=([2, 3], [1, 2])) + p["conv_b_b"]
        gate = _sigmoid(pre_b)
        gated = pre_a * gate  # (n, W, F)
        t_star = gated.argmax(axis=1)  # (n, F)
        pooled = np.take_along_axis(gated, t_star[:, None, :], axis=1)[:, 0, :]
        z = pooled @ p["dense_w"] + p["dense_b"]
        score = _sigmoid(z)
        return {"padded": padded, "win": win, "pre_a": pre_a, "pre_b": pre_b,
                "gate": gate, "t_star": t_star, "pooled": pooled, "z": z,
                "score": score}

    def scores(self, batch) -> np.ndarray:
        """Scores for a batch: a 2-D token array or a list of 1-D sequences
        (ragged rows are PAD-extended, which does not change their score)."""
        if isinstance(batch, np.ndarray) and batch.ndim == 2:
            rows = [batch[i] for i in range(batch.shape[0])]
        else:
            rows = [as_tokens(r) for r in batch]
        if not rows:
            return np.zeros(0, dtype=np.float64)
        padded = self._pad_batch(rows)
        return self._forward(padded)["score"].astype(np.float64)

    def score(self, x) -> float:
        return float(self.scores([as_tokens(x)])[0])

    # ------------------------------------------------------------------ #
    # exact masked-window fast path                                      #
    # ------------------------------------------------------------------ #

    def _pad_window_features(self) -> np.ndarray:
        """Gated features of one all-PAD window (honest about the PAD row)."""
        p = self.params
        pad_emb = p["embedding"][PAD_TOKEN]  # (E,), zero for trained models
        pre_a = p["conv_a_w"].sum(axis=1) @ pad_emb + p["conv_a_b"]
        pre_b = p["conv_b_w"].sum(axis=1) @ pad_emb + p["conv_b_b"]
        return pre_a * _sigmoid(pre_b)

    def scores_masked(self, x, starts, mask_len: int) -> np.ndarray:
        """Scores of mask_bytes(x, a, mask_len) for every start a.

        Equivalent to scores(masked_versions(x, starts, mask_len)) but shares
        one convolution pass: per version only the <= 2*ceil(K/stride)
        mask-boundary windows are recomputed; fully masked windows contribute
        the all-PAD feature vector and untouched windows are covered by
        prefix/suffix running maxima.
        """
        x = as_tokens(x)
        if len(x) == 0:
            x = np.array([PAD_TOKEN], dtype=np.int32)
        a = np.asarray(starts, dtype=np.int64)
        m = int(mask_len)
        if a.size == 0:
            return np.zeros(0, dtype=np.float64)
        if a.min() < 0 or (a + m).max() > len(x) or m < 1:
            raise ValueError("mask window out of range")
        cfg = self.config
        k, s = cfg.kernel_len, cfg.conv_stride
        p = self.params

        content_w, base_has_pad, padded_len = self._batch_layout(len(x))
        eff = min(len(x), cfg.max_len)
        padded = np.full(padded_len, PAD_TOKEN, dtype=np.int32)
        n_copy = min(eff, padded_len)
        padded[:n_copy] = x[:n_copy]
        fwd = self._forward(padded[None, :])
        gated = fwd["pre_a"][0] * fwd["gate"][0]  # (W_used, F)
        content = gated[:content_w]
        v_pad = self._pad_window_features()

        neg_inf = np.full((1, content.shape[1]), -np.inf, dtype=content.dtype)
        prefix = np.vstack([neg_inf, np.maximum.accumulate(content, axis=0)])
        suffix = np.vstack([np.maximum.accumulate(content[::-1], axis=0)[::-1],
                            neg_inf])

        # mask intervals clipped to the scored region
        a0 = np.minimum(a, eff)
        a1 = np.minimum(a + m, eff)
        empty = a0 >= a1
        # windows intersecting the mask: first t with t*s+K > a0, last with t*s < a1
        t_lo = np.maximum((a0 - k) // s + 1, 0)
        t_hi = np.minimum((a1 - 1) // s, content_w - 1)
        t_lo = np.where(empty, 0, t_lo)
        t_hi = np.where(empty, -1, t_hi)
        # fully masked windows: t*s >= a0 and t*s+K <= a1
        full_lo = np.maximum(-(-a0 // s), t_lo)
        full_hi = np.minimum((a1 - k) // s, t_hi)
        has_full = full_lo <= full_hi
        fl = np.where(has_full, full_lo, t_hi + 1)
        fh = np.where(has_full, full_hi, t_hi)

        pooled = np.maximum(prefix[t_lo], suffix[t_hi + 1])
        include_pad = has_full | base_has_pad
        if include_pad.any():
            pooled[include_pad] = np.maximum(pooled[include_pad], v_pad)

        # boundary windows: [t_lo, fl) and [fh+1, t_hi]
        ver_idx, t_idx = [], []
        for i in range(len(a)):
            for t in range(int(t_lo[i]), int(fl[i])):
                ver_idx.append(i)
                t_idx.append(t)
            for t in range(int(fh[i]) + 1, int(t_hi[i]) + 1):
                ver_idx.append(i)
                t_idx.append(t)
        if ver_idx:
            ver_idx = np.asarray(ver_idx)
            t_idx = np.asarray(t_idx)
            pos = t_idx[:, None] * s + np.arange(k)[None, :]
            toks = padded[pos].copy()
            inside = (pos >= a0[ver_idx][:, None]) & (pos < a1[ver_idx][:, None])
            toks[inside] = PAD_TOKEN
            emb = p["embedding"][toks]  # (nb, K, E)
            pre_a = np.tensordot(emb, p["conv_a_w"], axes=([1, 2], [1, 2])) + p["conv_a_b"]
            pre_b = np.tensordot(emb, p["conv_b_w"], axes=([1, 2], [1, 2])) + p["conv_b_b"]
            gated_bw = pre_a * _sigmoid(pre_b)
            np.maximum.at(pooled, ver_idx, gated_bw)

        z = pooled @ p["dense_w"] + p["dense_b"]
        return _sigmoid(z).astype(np.float64)

    # ------------------------------------------------------------------ #
    # backward                                                           #
    # ------------------------------------------------------------------ #

    def loss_and_grads(self, padded: np.ndarray, labels: np.ndarray):
        """Mean clamped BCE over a padded batch plus gradients for every
        parameter (including the true gradient of the PAD embedding row;
        the training loop is responsible for zeroing it)."""
        p = self.params
        cfg = self.config
        n = padded.shape[0]
        y = np.asarray(labels, dtype=self.dtype)
        fwd = self._forward(padded)

        p_hat = np.clip(fwd["score"], BCE_EPS, 1.0 - BCE_EPS)
        loss = float(np.mean(bce_loss(fwd["score"], y)))
        dz = (p_hat - y) / n  # clamp treated as identity

        grads = {}
        grads["dense_w"] = (fwd["pooled"].T @ dz).astype(self.dtype)
        grads["dense_b"] = np.asarray(dz.sum(), dtype=self.dtype)

        g_pooled = dz[:, None] * p["dense_w"][None, :]  # (n, F)
        t_star = fwd["t_star"]
        rows = np.arange(n)[:, None]
        a_star = np.take_along_axis(fwd["pre_a"], t_star[:, None, :], axis=1)[:, 0, :]
        gate_star = np.take_along_axis(fwd["gate"], t_star[:, None, :], axis=1)[:, 0, :]
        d_a = g_pooled * gate_star
        d_b = g_pooled * a_star * gate_star * (1.0 - gate_star)

        win_star = fwd["win"][rows, t_star]  # (n, F, K, E)
        grads["conv_a_w"] = np.einsum("nf,nfke->fke", d_a, win_star).astype(self.dtype)
        grads["conv_b_w"] = np.einsum("nf,nfke->fke", d_b, win_star).astype(self.dtype)
        grads["conv_a_b"] = d_a.sum(axis=0).astype(self.dtype)
        grads["conv_b_b"] = d_b.sum(axis=0).astype(self.dtype)

        # route gradient into the embedding rows picked by the argmax windows
        d_win = (d_a[:, :, None, None] * p["conv_a_w"][None]
                 + d_b[:, :, None, None] * p["conv_b_w"][None])  # (n, F, K, E)
        pos = t_star[:, :, None] * cfg.conv_stride + np.arange(cfg.kernel_len)[None, None, :]
        tokens = padded[np.arange(n)[:, None, None], pos]
        d_emb = np.zeros_like(p["embedding"])
        np.add.at(d_emb, tokens.reshape(-1),
                  d_win.reshape(-1, cfg.embed_dim).astype(self.dtype))
        grads["embedding"] = d_emb
        return loss, grads


def init_model(config: ClassifierConfig, seed: int = 0,
               dtype=np.float32) -> GatedConvNet:
    return GatedConvNet.initialized(config, np.random.default_rng(seed), dtype)


# ---------------------------------------------------------------------- #
# training                                                               #
# ---------------------------------------------------------------------- #

TRAIN_STRATEGIES = ("mask", "delete", "chunk", "none")


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch gradient-descent settings plus the per-example noise family
    applied freshly every epoch (mask-window, byte deletion, single random
    chunk, or none)."""

    strategy: str = "mask"
    mask_percent: PercentLike = 50
    delete_prob: float = 0.97
    chunk_count: int = 10
    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in TRAIN_STRATEGIES:
            raise ValueError(f"strategy must be one of {TRAIN_STRATEGIES}")
        if not 0.0 <= self.delete_prob <= 1.0:
            raise ValueError("delete_prob must be in [0, 1]")
        if self.chunk_count < 1:
            raise ValueError("chunk_count must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def _noised(x: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.strategy == "none":
        return x
    if cfg.strategy == "mask":
        m = mask_len_bytes(len(x), cfg.mask_percent)
        return mask_bytes(x, random_mask_start(len(x), m, rng), m)
    if cfg.strategy == "delete":
        return random_deletion(x, cfg.delete_prob, rng)
    bounds = split_chunks(len(x), min(cfg.chunk_count, len(x)))
    lo, hi = bounds[int(rng.integers(len(bounds)))]
    return x[lo:hi]


def train(model: GatedConvNet, sequences, labels, cfg: TrainConfig) -> list:
    """Train in place; returns the per-epoch mean-loss trace.

    Plain minibatch gradient descent with optional momentum.  The PAD
    embedding row's gradient is zeroed every step, so the row stays exactly
    as initialized (zero for models from ``init_model``).
    """
    xs = [as_tokens(s) for s in sequences]
    y = np.asarray(labels, dtype=np.float64)
    if len(xs) != len(y) or len(xs) == 0:
        raise ValueError("sequences and labels must be equal-length and nonempty")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    if min(len(x) for x in xs) == 0:
        raise ValueError("sequences must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    velocity = {name: np.zeros_like(arr) for name, arr in model.params.items()}
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(xs))
        total = 0.0
        for lo in range(0, len(xs), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            rows = [_noised(xs[i], cfg, rng) for i in idx]
            padded = model._pad_batch(rows)
            loss, grads = model.loss_and_grads(padded, y[idx])
            grads["embedding"][PAD_TOKEN] = 0.0
            for name, g in grads.items():
                v = velocity[name]
                v *= cfg.momentum
                v += g
                model.params[name] -= cfg.learning_rate * v
            total += loss * len(idx)
        trace.append(total / len(xs))
    return trace


# ---------------------------------------------------------------------- #
# model file format                                                      #
# ---------------------------------------------------------------------- #

def model_to_bytes(model: GatedConvNet) -> bytes:
    cfg = model.config
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<6I", MODEL_VERSION, cfg.embed_dim, cfg.num_filters,
                          cfg.kernel_len, cfg.conv_stride, cfg.max_len))
    for name in PARAM_NAMES:
        buf.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())
    return buf.getvalue()


def model_from_bytes(data: bytes) -> GatedConvNet:
    if len(data) < len(MODEL_MAGIC) + 24:
        raise ModelFormatError("model file truncated before header end")
    if data[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError("bad model magic")
    version, e, f, k, s, ml = struct.unpack_from("<6I", data, len(MODEL_MAGIC))
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    try:
        cfg = ClassifierConfig(embed_dim=e, num_filters=f, kernel_len=k,
                               conv_stride=s, max_len=ml)
    except ValueError as exc:
        raise ModelFormatError(f"invalid model config: {exc}") from exc
    offset = len(MODEL_MAGIC) + 24
    params = {}
    for name, shape in cfg.param_shapes().items():
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(data):
            raise ModelFormatError(f"model file truncated inside tensor {name}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        params[name] = arr.reshape(shape).astype(np.float32).copy()
        offset += nbytes
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes after tensors")
    return GatedConvNet(cfg, params)


def save_model(model: GatedConvNet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> GatedConvNet:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


# ---------------------------------------------------------------------- #
# deterministic pattern oracle                                           #
# ---------------------------------------------------------------------- #

def _match_starts(x: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """Start offsets of exact contiguous occurrences of pattern in x."""
    if len(pattern) > len(x):
        return np.zeros(0, dtype=np.int64)
    windows = np.lib.stride_tricks.sliding_window_view(x, len(pattern))
    return np.flatnonzero((windows == pattern).all(axis=1)).astype(np.int64)


class PatternOracle:
    """Deterministic classifier keyed on exact byte patterns, for tests and
    certification harnesses.

    Scores ``miss`` when the decoy pattern occurs intact (decoy dominates),
    else ``hit`` when the signature occurs intact, else ``miss``.  "Intact"
    means a contiguous exact match; a mask overlapping an occurrence destroys
    it because PAD equals no byte value.
    """

    def __init__(self, signature, decoy, hit: float = 0.9, miss: float = 0.1):
        self.signature = as_tokens(signature)
        self.decoy = as_tokens(decoy)
        for pat in (self.signature, self.decoy):
            if len(pat) == 0:
                raise ValueError("patterns must be nonempty")
            if pat.max() > 255:
                raise ValueError("patterns are raw bytes; PAD not allowed")
        if not (0.0 <= miss < 0.5 <= hit <= 1.0):
            raise ValueError("need miss < 0.5 <= hit")
        self.hit = float(hit)
        self.miss = float(miss)

    def score(self, x) -> float:
        x = as_tokens(x)
        if len(_match_starts(x, self.decoy)):
            return self.miss
        if len(_match_starts(x, self.signature)):
            return self.hit
        return self.miss

    def scores(self, batch) -> np.ndarray:
        rows = (batch if not (isinstance(batch, np.ndarray) and batch.ndim == 2)
                else list(batch))
        return np.array([self.score(r) for r in rows], dtype=np.float64)

    def scores_masked(self, x, starts, mask_len: int) -> np.ndarray:
        """Scores of every masked version, from the unmasked occurrence lists:
        an occurrence survives window [a, a+m) iff it lies entirely outside."""
        x = as_tokens(x)
        a = np.asarray(starts, dtype=np.int64)[:, None]
        m = int(mask_len)
        if a.size and (a.min() < 0 or (a + m).max() > len(x) or m < 1):
            raise ValueError("mask window out of range")

        def visible(pattern):
            q = _match_starts(x, pattern)[None, :]
            if q.size == 0:
                return np.zeros(a.shape[0], dtype=bool)
            return ((q + pattern.size <= a) | (q >= a + m)).any(axis=1)

        out = np.where(visible(self.decoy), self.miss,
                       np.where(visible(self.signature), self.hit, self.miss))
        return out.astype(np.float64)


class FunctionClassifier:
    """Adapter giving a plain score function the batch/masked interface."""

    def __init__(self, fn):
        self.fn = fn

    def score(self, x) -> float:
        return float(self.fn(as_tokens(x)))

    def scores(self, batch) -> np.ndarray:
        rows = (batch if not (isinstance(batch, np.ndarray) and batch.ndim == 2)
                else list(batch))
        return np.array([self.score(r) for r in rows], dtype=np.float64)
