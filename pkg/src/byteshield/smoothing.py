"""Voting predictors built on randomized or structured input reductions.

Each predictor classifies several reduced versions of one input and
aggregates per-version verdicts (score >= 0.5 counts as a malicious vote):

  * byteshield_predict -- sliding PAD-mask windows, threshold vote
  * drs_predict        -- k contiguous chunks, majority vote (ties malicious)
  * rsdel_predict      -- random byte-deletion samples, majority vote
  * plain_predict      -- the undefended single-pass verdict

certify_exhaustive enumerates every possible mask placement and reports
whether the vote is unanimous, which is the desk-scale check behind the
window-coverage security argument: a contiguous payload of at most mask_len
bytes is fully hidden by at least one window, so unanimity is impossible for
an input whose verdict that payload could change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .masking import (
    DefenseConfig,
    as_tokens,
    masked_versions,
    plan_windows,
    random_deletion,
    split_chunks,
)


@dataclass(frozen=True)
class ChunkConfig:
    """Chunk-ablation settings: split into num_chunks contiguous pieces."""

    num_chunks: int = 10

    def __post_init__(self):
        if not (isinstance(self.num_chunks, (int, np.integer)) and self.num_chunks >= 1):
            raise ValueError(f"num_chunks must be an integer >= 1, got {self.num_chunks}")


@dataclass(frozen=True)
class DeletionConfig:
    """Deletion-smoothing settings: num_samples random copies, each keeping
    every byte with probability 1 - delete_prob; fresh generator per call
    seeded from ``seed`` so repeated predictions are identical."""

    delete_prob: float = 0.97
    num_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delete_prob <= 1.0:
            raise ValueError(f"delete_prob must be in [0, 1], got {self.delete_prob}")
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {self.num_samples}")


@dataclass(frozen=True)
class VoteTally:
    """Per-version scores with their vote split.  ``starts`` holds window
    start offsets (mask voting), chunk start offsets (chunk voting), or
    sample ordinals (deletion voting)."""

    num_malicious: int
    num_benign: int
    starts: Tuple[int, ...]
    scores: Tuple[float, ...]

    def __post_init__(self):
        if len(self.starts) != len(self.scores):
            raise ValueError("starts and scores must align")
        mal = sum(1 for s in self.scores if s >= 0.5)
        if mal != self.num_malicious or self.num_malicious + self.num_benign != len(self.scores):
            raise ValueError("vote counts inconsistent with scores")

    @property
    def num_versions(self) -> int:
        return len(self.scores)

    def as_dict(self) -> dict:
        return {
            "num_malicious": self.num_malicious,
            "num_benign": self.num_benign,
            "starts": list(self.starts),
            "scores": list(self.scores),
        }


def _tally(scores: np.ndarray, starts) -> VoteTally:
    scores = np.asarray(scores, dtype=np.float64)
    mal = int((scores >= 0.5).sum())
    return VoteTally(num_malicious=mal, num_benign=int(scores.size - mal),
                     starts=tuple(int(s) for s in starts),
                     scores=tuple(float(s) for s in scores))


def masked_window_scores(classifier, x, starts, mask_len: int) -> np.ndarray:
    """Scores of every masked version, via the classifier's exact fast path
    when it has one and mask-then-score otherwise."""
    fast = getattr(classifier, "scores_masked", None)
    if fast is not None:
        return np.asarray(fast(x, starts, mask_len), dtype=np.float64)
    return np.asarray(classifier.scores(masked_versions(x, starts, mask_len)),
                      dtype=np.float64)


def byteshield_predict(classifier, x, cfg: DefenseConfig):
    """Mask-window threshold vote: malicious iff at least cfg.threshold
    windows score malicious.  Returns (is_malicious, VoteTally)."""
    x = as_tokens(x)
    ws = plan_windows(len(x), cfg)
    scores = masked_window_scores(classifier, x, ws.starts, ws.mask_len)
    tally = _tally(scores, ws.starts)
    return tally.num_malicious >= cfg.threshold, tally


def drs_predict(classifier, x, cfg: ChunkConfig):
    """Chunk-ablation majority vote; ties count as malicious.  Raises
    ValueError if the input has fewer bytes than chunks."""
    x = as_tokens(x)
    bounds = split_chunks(len(x), cfg.num_chunks)
    scores = np.asarray(classifier.scores([x[lo:hi] for lo, hi in bounds]),
                        dtype=np.float64)
    tally = _tally(scores, [lo for lo, _ in bounds])
    return tally.num_malicious >= math.ceil(cfg.num_chunks / 2), tally


def rsdel_predict(classifier, x, cfg: DeletionConfig):
    """Deletion-smoothing majority vote; ties count as malicious.
    Deterministic for a fixed config seed."""
    x = as_tokens(x)
    rng = np.random.default_rng(cfg.seed)
    versions = [random_deletion(x, cfg.delete_prob, rng)
                for _ in range(cfg.num_samples)]
    scores = np.asarray(classifier.scores(versions), dtype=np.float64)
    tally = _tally(scores, range(cfg.num_samples))
    return tally.num_malicious >= math.ceil(cfg.num_samples / 2), tally


def plain_predict(classifier, x) -> bool:
    """Undefended verdict: malicious iff score >= 0.5 (boundary inclusive)."""
    return bool(classifier.score(as_tokens(x)) >= 0.5)


@dataclass(frozen=True)
class ExhaustiveResult:
    """Outcome of classifying the mask at every possible start."""

    unanimous: bool
    label: Optional[bool]  # set only when unanimous
    num_malicious: int
    num_versions: int


def certify_exhaustive(classifier, x, mask_len: int) -> ExhaustiveResult:
    """Classify mask_bytes(x, a, mask_len) for every a in [0, L - mask_len]
    and report unanimity.  A disagreement means no certificate: some mask
    placement changes the verdict."""
    x = as_tokens(x)
    if not 1 <= mask_len <= len(x):
        raise ValueError(f"mask_len must be in [1, {len(x)}], got {mask_len}")
    starts = np.arange(0, len(x) - mask_len + 1, dtype=np.int64)
    scores = masked_window_scores(classifier, x, starts, mask_len)
    mal = int((scores >= 0.5).sum())
    unanimous = mal in (0, scores.size)
    return ExhaustiveResult(unanimous=unanimous,
                            label=bool(mal) if unanimous else None,
                            num_malicious=mal, num_versions=int(scores.size))


DEFENSE_KINDS = ("none", "byteshield", "drs", "rsdel")


@dataclass(frozen=True)
class Detector:
    """A classifier with its (optional) smoothing defense, presenting one
    predict/objective surface to attacks and evaluation.

    ``objective`` is the attacker-visible maliciousness: the raw score for an
    undefended model, else the malicious-vote fraction.  The label rule is
    objective >= benign_threshold(length); hard_label mode collapses the
    objective to 1.0/0.0.
    """

    classifier: object
    kind: str = "none"
    defense: object = None

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ValueError(f"kind must be one of {DEFENSE_KINDS}")
        expected = {"none": type(None), "byteshield": DefenseConfig,
                    "drs": ChunkConfig, "rsdel": DeletionConfig}[self.kind]
        if not isinstance(self.defense, expected):
            raise ValueError(f"defense for kind={self.kind!r} must be {expected.__name__}")

    def predict(self, x):
        """Returns (is_malicious, VoteTally or None)."""
        if self.kind == "none":
            return plain_predict(self.classifier, x), None
        if self.kind == "byteshield":
            return byteshield_predict(self.classifier, x, self.defense)
        if self.kind == "drs":
            return drs_predict(self.classifier, x, self.defense)
        return rsdel_predict(self.classifier, x, self.defense)

    def objective(self, x, hard_label: bool = False) -> float:
        if hard_label:
            return 1.0 if self.predict(x)[0] else 0.0
        if self.kind == "none":
            return float(self.classifier.score(as_tokens(x)))
        label, tally = self.predict(x)
        return tally.num_malicious / tally.num_versions

    def benign_threshold(self, length: int) -> float:
        """Objective values strictly below this are labeled benign."""
        if self.kind == "none":
            return 0.5
        if self.kind == "byteshield":
            n = plan_windows(length, self.defense).num_windows
            return self.defense.threshold / n
        n = (self.defense.num_chunks if self.kind == "drs"
             else self.defense.num_samples)
        return math.ceil(n / 2) / n

    def num_votes(self, length: int) -> int:
        if self.kind == "none":
            return 1
        if self.kind == "byteshield":
            return plan_windows(length, self.defense).num_windows
        return (self.defense.num_chunks if self.kind == "drs"
                else self.defense.num_samples)


def make_detector(classifier, kind: str = "none", *, mask_percent=50,
                  stride_percent=1, threshold: int = 1, num_chunks: int = 10,
                  delete_prob: float = 0.97, num_samples: int = 100,
                  seed: int = 0) -> Detector:
    """Convenience constructor mapping flat settings to the right config."""
    if kind == "none":
        return Detector(classifier, "none", None)
    if kind == "byteshield":
        return Detector(classifier, "byteshield",
                        DefenseConfig(mask_percent, stride_percent, threshold))
    if kind == "drs":
        return Detector(classifier, "drs", ChunkConfig(num_chunks))
    if kind == "rsdel":
        return Detector(classifier, "rsdel",
                        DeletionConfig(delete_prob, num_samples, seed))
    raise ValueError(f"kind must be one of {DEFENSE_KINDS}")


class CountingClassifier:
    """Wrapper counting logical forward passes (one per sequence scored)."""

    def __init__(self, inner):
        self.inner = inner
        self.count = 0

    def score(self, x) -> float:
        self.count += 1
        return self.inner.score(x)

    def scores(self, batch) -> np.ndarray:
        n = batch.shape[0] if isinstance(batch, np.ndarray) else len(batch)
        self.count += int(n)
        return self.inner.scores(batch)

    def scores_masked(self, x, starts, mask_len: int) -> np.ndarray:
        self.count += int(np.asarray(starts).size)
        fast = getattr(self.inner, "scores_masked", None)
        if fast is not None:
            return fast(x, starts, mask_len)
        return self.inner.scores(masked_versions(as_tokens(x), starts, mask_len))
