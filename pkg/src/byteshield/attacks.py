"""Black-box evasion attacks over the PE substrate.

An attack picks a functionality-preserving placement strategy (overlay
padding, a header-shift gap, per-section code caves, or injected sections),
reserves a byte budget proportional to file size, and then drives the
payload bytes with a query-limited (1+1) evolutionary optimizer against the
detector's scalar objective (raw score for an undefended model, malicious
vote fraction for a smoothed one).  The optimizer is elitist: a candidate
replaces the incumbent only when the objective strictly decreases.

All placement goes through parse/transform/serialize, so attacked files
remain well-formed images whose bytes differ from the transformed baseline
only inside the declared payload slots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .masking import as_percent, as_tokens
from .pe import (
    append_overlay,
    carve_caves,
    inject_sections,
    parse_pe,
    serialize_pe,
    shift_insert,
)

STRATEGIES = ("padding", "shift", "code_caves", "section_injection")
INIT_MODES = ("benign", "random", "zeros")

_MUTATION_RATE_CAP = 0.25
_STALL_LIMIT = 10


class NotDetectedError(RuntimeError):
    """The clean input is already classified benign, so there is nothing to
    evade; callers should exclude the sample rather than score it."""

    def __init__(self, sample_id=None, score=None):
        self.sample_id = sample_id
        self.score = score
        super().__init__(f"input {sample_id!r} not detected (score {score})")


@dataclass(frozen=True)
class AttackSpec:
    strategy: str
    budget_percent: float = 10.0
    init: str = "benign"
    optimizer_budget: int = 3000
    max_new_sections: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, "
                             f"got {self.strategy!r}")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, "
                             f"got {self.init!r}")
        if not 0 <= float(self.budget_percent) <= 100:
            raise ValueError(f"budget_percent must be in [0, 100], "
                             f"got {self.budget_percent}")
        if self.optimizer_budget < 1:
            raise ValueError(f"optimizer_budget must be >= 1, "
                             f"got {self.optimizer_budget}")
        if not 1 <= self.max_new_sections <= 5:
            raise ValueError(f"max_new_sections must be in 1..5, "
                             f"got {self.max_new_sections}")

    def payload_len(self, file_len: int) -> int:
        return int(math.ceil(file_len * as_percent(self.budget_percent) / 100))


@dataclass(frozen=True)
class PayloadSlot:
    offset: int
    length: int


@dataclass(frozen=True)
class PayloadLayout:
    """Transformed baseline (payload regions zero-filled) plus the writable
    slots the optimizer may fill."""

    data: bytes
    slots: Tuple[PayloadSlot, ...]

    @property
    def payload_len(self) -> int:
        return sum(s.length for s in self.slots)

    def slot_indices(self) -> np.ndarray:
        if not self.slots:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.arange(s.offset, s.offset + s.length,
                                         dtype=np.int64)
                               for s in self.slots])

    def apply(self, payload: np.ndarray) -> bytes:
        payload = np.asarray(payload, dtype=np.uint8)
        if payload.shape != (self.payload_len,):
            raise ValueError(f"payload must have length {self.payload_len}, "
                             f"got shape {payload.shape}")
        buf = bytearray(self.data)
        pos = 0
        for s in self.slots:
            buf[s.offset:s.offset + s.length] = \
                payload[pos:pos + s.length].tobytes()
            pos += s.length
        return bytes(buf)


def split_budget(total: int, parts: int) -> List[int]:
    """Equal integer split with the remainder folded into the last share;
    shares may be zero when total < parts."""
    if parts < 1:
        raise ValueError(f"parts must be >= 1, got {parts}")
    if total < 0:
        raise ValueError(f"total must be >= 0, got {total}")
    base, rem = divmod(total, parts)
    shares = [base] * parts
    shares[-1] += rem
    return shares


def build_payload_slots(pe_bytes: bytes, spec: AttackSpec) -> PayloadLayout:
    img = parse_pe(pe_bytes)
    p = spec.payload_len(len(pe_bytes))
    if p == 0:
        return PayloadLayout(data=bytes(pe_bytes), slots=())

    if spec.strategy == "padding":
        new = append_overlay(img, b"\x00" * p)
        return PayloadLayout(serialize_pe(new),
                             (PayloadSlot(img.total_size, p),))

    if spec.strategy == "shift":
        new, (offset, _aligned) = shift_insert(img, p)
        # only the requested bytes are writable; alignment padding stays zero
        return PayloadLayout(serialize_pe(new), (PayloadSlot(offset, p),))

    if spec.strategy == "code_caves":
        eligible = img.raw_section_indices()
        if not eligible:
            raise ValueError("no sections with raw data to carve caves in")
        shares = split_budget(p, len(eligible))
        sizes = [0] * len(img.sections)
        for idx, share in zip(eligible, shares):
            sizes[idx] = share
        new, ranges = carve_caves(img, sizes)
        slots = tuple(PayloadSlot(off, length)
                      for off, length in ranges if length > 0)
        return PayloadLayout(serialize_pe(new), slots)

    # section_injection
    k = min(spec.max_new_sections, p)
    shares = split_budget(p, k)
    new, ranges = inject_sections(img, shares)
    slots = tuple(PayloadSlot(off, length) for off, length in ranges)
    return PayloadLayout(serialize_pe(new), slots)


@dataclass(frozen=True)
class DonorPool:
    """Concatenated benign content used to seed payloads with realistic
    byte statistics."""

    pool: bytes

    @classmethod
    def from_blobs(cls, blobs: Sequence[bytes]) -> "DonorPool":
        return cls(pool=b"".join(bytes(b) for b in blobs))

    def sample(self, length: int, rng: np.random.Generator) -> np.ndarray:
        if length > len(self.pool):
            raise ValueError(f"donor pool has {len(self.pool)} bytes, "
                             f"cannot supply {length}")
        # slice on 8-byte boundaries: donor files are 512-aligned inside the
        # pool, so aligned slices keep structured content on the same grid
        # when the payload lands at a section or overlay boundary
        start = 8 * int(rng.integers(0, (len(self.pool) - length) // 8 + 1))
        return np.frombuffer(self.pool[start:start + length],
                             dtype=np.uint8).copy()


def init_payload(length: int, init: str, rng: np.random.Generator,
                 donor: Optional[DonorPool] = None) -> np.ndarray:
    if init == "zeros":
        return np.zeros(length, dtype=np.uint8)
    if init == "random":
        return rng.integers(0, 256, size=length, dtype=np.uint8)
    if init == "benign":
        if donor is None:
            raise ValueError("benign init requires a donor pool")
        return donor.sample(length, rng)
    raise ValueError(f"init must be one of {INIT_MODES}, got {init!r}")


def optimize_payload(objective: Callable[[np.ndarray], float],
                     payload: np.ndarray, budget: int,
                     rng: np.random.Generator, *,
                     stop_below: Optional[float] = None
                     ) -> Tuple[np.ndarray, float, float, int]:
    """(1+1)-EA over byte vectors.

    Each step resamples k ~ max(1, Binomial(p, r)) positions uniformly; the
    candidate is kept only on strict improvement.  The mutation rate r starts
    at 1/p, halves on every accept, and doubles after 10 consecutive
    rejections, clamped to [1/p, 0.25].  Every objective call (including the
    initial one) counts against the query budget; the loop exits early once
    the best objective drops below stop_below.

    Returns (best_payload, initial_objective, best_objective, queries).
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    p = len(payload)
    if p == 0:
        raise ValueError("cannot optimize an empty payload")
    best = np.array(payload, dtype=np.uint8, copy=True)
    f_best = float(objective(best))
    f_init = f_best
    queries = 1
    rate = 1.0 / p
    stalled = 0
    while queries < budget:
        if stop_below is not None and f_best < stop_below:
            break
        k = max(1, int(rng.binomial(p, rate)))
        k = min(k, p)
        idx = rng.choice(p, size=k, replace=False)
        cand = best.copy()
        cand[idx] = rng.integers(0, 256, size=k, dtype=np.uint8)
        f = float(objective(cand))
        queries += 1
        if f < f_best:
            best, f_best = cand, f
            rate = max(rate / 2.0, 1.0 / p)
            stalled = 0
        else:
            stalled += 1
            if stalled >= _STALL_LIMIT:
                rate = min(rate * 2.0, _MUTATION_RATE_CAP)
                stalled = 0
    return best, f_init, f_best, queries


@dataclass(frozen=True)
class AttackResult:
    sample_id: str
    strategy: str
    budget_percent: float
    init: str
    seed: int
    queries: int
    initial_score: float
    final_score: float
    evaded: bool
    attacked: bytes

    def record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "strategy": self.strategy,
            "budget_percent": float(self.budget_percent),
            "init": self.init,
            "seed": self.seed,
            "queries": self.queries,
            "initial_score": self.initial_score,
            "final_score": self.final_score,
            "evaded": self.evaded,
        }


def run_attack(pe_bytes: bytes, detector, spec: AttackSpec, *,
               donor: Optional[DonorPool] = None,
               sample_id: str = "", run_to_budget: bool = False
               ) -> AttackResult:
    """Attack one detected file.  Raises NotDetectedError when the clean
    input is already classified benign (vacuous attack)."""
    clean_tokens = as_tokens(pe_bytes)
    detected, _ = detector.predict(clean_tokens)
    if not detected:
        raise NotDetectedError(sample_id, detector.objective(clean_tokens))

    layout = build_payload_slots(pe_bytes, spec)
    template = as_tokens(layout.data).copy()
    threshold = detector.benign_threshold(len(layout.data))

    if layout.payload_len == 0:
        score = float(detector.objective(template))
        return AttackResult(sample_id=sample_id, strategy=spec.strategy,
                            budget_percent=float(spec.budget_percent),
                            init=spec.init, seed=spec.seed, queries=0,
                            initial_score=score, final_score=score,
                            evaded=bool(score < threshold),
                            attacked=layout.data)

    slot_idx = layout.slot_indices()

    def objective(payload: np.ndarray) -> float:
        template[slot_idx] = payload
        return float(detector.objective(template))

    rng = np.random.default_rng(spec.seed)
    payload0 = init_payload(layout.payload_len, spec.init, rng, donor)
    best, f_init, f_best, queries = optimize_payload(
        objective, payload0, spec.optimizer_budget, rng,
        stop_below=None if run_to_budget else threshold)
    return AttackResult(sample_id=sample_id, strategy=spec.strategy,
                        budget_percent=float(spec.budget_percent),
                        init=spec.init, seed=spec.seed, queries=queries,
                        initial_score=f_init, final_score=f_best,
                        evaded=bool(f_best < threshold),
                        attacked=layout.apply(best))


def write_results_jsonl(results: Sequence[AttackResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.record()) + "\n")
