"""Deterministic synthetic PE corpora with planted byte evidence.

All planted patterns are 8-byte single-value runs on 8-byte grid offsets,
so a stride-8 width-8 convolution sees each plant as one clean window and
partially built runs activate it partway (which is what makes the plants
both learnable and hill-climbable for byte-level attacks).

Benign files carry a dense texture of marker runs, one per 64-byte cell of
section data, cycling through all eight marker types: every contiguous 600
bytes of section content shows the full benign vocabulary, so any sizable
slice of a benign file is recognizably benign and no half-file mask can
hide the evidence.  Runs sit in the first third of their cell, which caps
how many distinct types a short slice can show: a window of one stride
percent of a file (at most a couple hundred bytes) reveals at most three
types, while a ten percent slice always reveals five or more.  That length
gradient is what separates a real injected payload from the sliver of one
left behind by a near-covering mask.  A configurable fraction of benign
files also contains one intact family signature; those files are what
force a classifier to weigh abundant benign texture above a lone
signature, the dynamic that content-injection attacks exploit.

Malicious files carry a per-family signature run planted several times and
no marker runs, so benign evidence enters a malicious file only through
deliberate content injection.  The two extreme signature occurrences sit
far enough apart that any single contiguous mask covering up to half the
file leaves at least one occurrence intact.

Temporal drift: files are spread round-robin over a month range, and in
month t a deterministic floor(q_t * count_t) of that month's malicious
files have every signature occurrence mutated, which degrades detectors
trained on earlier months.

Generation is pure: the same spec always reproduces byte-identical files.
"""

from __future__ import annotations

import csv
import datetime
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .pe import build_pe

GRID = 8
SIG_LEN = 8
MARKER_CELL = 64  # one marker run per 64-byte cell of benign section data
MARKER_JITTER_SLOTS = 3  # runs start at cell offset 0, 8, or 16

BENIGN_MARKERS = tuple(
    bytes([v]) * SIG_LEN
    for v in (0x9D, 0x47, 0xE1, 0x33, 0x5C, 0x88, 0x0F, 0x74)
)

FAMILY_SIGNATURES = {
    "alpha": b"\xaa" * SIG_LEN,
    "beta": b"\xbb" * SIG_LEN,
    "gamma": b"\xcc" * SIG_LEN,
}


def mutate_signature(sig: bytes, month_index: int) -> bytes:
    """Drifted variant: three interior bytes rotate with the month index,
    so every non-zero month yields a pattern unseen in earlier months."""
    if month_index == 0:
        return sig
    body = bytes((sig[j] + 17 * month_index) % 256 for j in (2, 3, 4))
    return sig[:2] + body + sig[5:]


# ---------------------------------------------------------------------- #
# month arithmetic                                                       #
# ---------------------------------------------------------------------- #

def _parse_month(month: str) -> Tuple[int, int]:
    try:
        y, m = month.split("-")
        y, m = int(y), int(m)
    except ValueError:
        raise ValueError(f"month must look like YYYY-MM, got {month!r}")
    if not 1 <= m <= 12:
        raise ValueError(f"month must look like YYYY-MM, got {month!r}")
    return y, m


def month_sequence(start: str, count: int) -> List[str]:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    y, m = _parse_month(start)
    out = []
    for k in range(count):
        total = m - 1 + k
        out.append(f"{y + total // 12:04d}-{total % 12 + 1:02d}")
    return out


def month_span(first: str, last: str) -> List[str]:
    """Inclusive list of months between two YYYY-MM endpoints."""
    y0, m0 = _parse_month(first)
    y1, m1 = _parse_month(last)
    count = (y1 - y0) * 12 + (m1 - m0) + 1
    if count < 1:
        raise ValueError(f"{last} precedes {first}")
    return month_sequence(first, count)


def month_of(timestamp: str) -> str:
    datetime.date.fromisoformat(timestamp)
    return timestamp[:7]


# ---------------------------------------------------------------------- #
# manifest                                                               #
# ---------------------------------------------------------------------- #

MANIFEST_HEADER = ["path", "label", "timestamp", "family"]


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int
    timestamp: str
    family: str = ""


def atomic_write_text(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(records: Sequence[ManifestRecord], path) -> None:
    lines = [",".join(MANIFEST_HEADER)]
    for r in records:
        lines.append(f"{r.path},{r.label},{r.timestamp},{r.family}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_manifest(path) -> List[ManifestRecord]:
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if row != MANIFEST_HEADER:
                    raise ValueError(
                        f"{path}:1: header must be "
                        f"{','.join(MANIFEST_HEADER)!r}, got {','.join(row)!r}")
                continue
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, "
                                 f"got {len(row)}")
            p, label, ts, family = row
            if label not in ("0", "1"):
                raise ValueError(f"{path}:{lineno}: label must be 0 or 1, "
                                 f"got {label!r}")
            try:
                datetime.date.fromisoformat(ts)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: timestamp must be "
                                 f"YYYY-MM-DD, got {ts!r}")
            records.append(ManifestRecord(path=p, label=int(label),
                                          timestamp=ts, family=family))
    return records


# ---------------------------------------------------------------------- #
# generation                                                             #
# ---------------------------------------------------------------------- #

@dataclass(frozen=True)
class SynthSpec:
    n_benign: int
    n_malicious: int
    min_size: int = 4096
    max_size: int = 16384
    start_month: str = "2019-09"
    n_months: int = 13
    drift_per_month: float = 0.0
    benign_sig_fraction: float = 0.2
    families: Tuple[str, ...] = ("alpha", "beta", "gamma")
    seed: int = 0

    def __post_init__(self):
        if self.n_benign < 0 or self.n_malicious < 0:
            raise ValueError("corpus sizes must be >= 0")
        if not 2048 <= self.min_size <= self.max_size:
            raise ValueError(f"need 2048 <= min_size <= max_size, got "
                             f"{self.min_size}..{self.max_size}")
        if not 0 <= self.drift_per_month <= 1:
            raise ValueError("drift_per_month must be in [0, 1]")
        if not 0 <= self.benign_sig_fraction <= 1:
            raise ValueError("benign_sig_fraction must be in [0, 1]")
        unknown = set(self.families) - set(FAMILY_SIGNATURES)
        if unknown:
            raise ValueError(f"unknown families {sorted(unknown)}")
        _parse_month(self.start_month)


@dataclass(frozen=True)
class SynthSample:
    name: str
    data: bytes
    label: int
    timestamp: str
    family: str = ""

    def record(self, prefix: str = "files/") -> ManifestRecord:
        return ManifestRecord(path=prefix + self.name, label=self.label,
                              timestamp=self.timestamp, family=self.family)


def _pick_sizes(rng, spec) -> Tuple[int, int, int]:
    total = int(rng.integers(spec.min_size // 512,
                             spec.max_size // 512 + 1)) * 512
    body = total - 512  # headers occupy one alignment unit
    sec0 = max(512, (body // 2 // 512) * 512)
    return total, sec0, body - sec0


def _grid_slots(lo: int, hi: int) -> np.ndarray:
    """Aligned plant offsets in [lo, hi - SIG_LEN], inclusive."""
    start = -(-lo // GRID) * GRID
    stop = hi - SIG_LEN
    if stop < start:
        return np.zeros(0, dtype=np.int64)
    return np.arange(start, stop + 1, GRID, dtype=np.int64)


def _plant(buf: np.ndarray, offset: int, pattern: bytes):
    buf[offset:offset + len(pattern)] = np.frombuffer(pattern, dtype=np.uint8)


def _plant_guarded(buf: np.ndarray, offset: int, pattern: bytes):
    """Plant with fence bytes so random neighbors cannot extend the run and
    shift its match offsets off the grid."""
    _plant(buf, offset, pattern)
    fence = (pattern[0] + 1) % 256
    if offset > 0:
        buf[offset - 1] = fence
    end = offset + len(pattern)
    if end < len(buf):
        buf[end] = fence


def _random_sections(rng, sec0: int, sec1: int) -> Tuple[np.ndarray, np.ndarray]:
    return (rng.integers(0, 256, size=sec0, dtype=np.uint8),
            rng.integers(0, 256, size=sec1, dtype=np.uint8))


def _build_benign(rng, spec) -> bytes:
    total, sec0, sec1 = _pick_sizes(rng, spec)
    p0, p1 = _random_sections(rng, sec0, sec1)
    # one marker run per cell, cycling the types with a per-file phase and a
    # grid-aligned jitter confined to the first third of the cell
    phase = int(rng.integers(len(BENIGN_MARKERS)))
    k = 0
    for buf, sec in ((p0, sec0), (p1, sec1)):
        for base in range(0, sec - MARKER_CELL + 1, MARKER_CELL):
            jitter = GRID * int(rng.integers(MARKER_JITTER_SLOTS))
            _plant(buf, base + jitter,
                   BENIGN_MARKERS[(phase + k) % len(BENIGN_MARKERS)])
            k += 1
    if rng.random() < spec.benign_sig_fraction:
        family = spec.families[int(rng.integers(len(spec.families)))]
        slots = _grid_slots(512, sec1 - 512)
        if len(slots):
            _plant_guarded(p1, int(rng.choice(slots)),
                           FAMILY_SIGNATURES[family])
    return build_pe([p0.tobytes(), p1.tobytes()])


def _build_malicious(rng, spec, family: str, month_index: int,
                     drifted: bool) -> bytes:
    total, sec0, sec1 = _pick_sizes(rng, spec)
    p0, p1 = _random_sections(rng, sec0, sec1)
    sig = FAMILY_SIGNATURES[family]
    if drifted:
        sig = mutate_signature(sig, month_index)

    # extra signature copies in the middle band on every-other grid slot
    # (16-byte spacing keeps planted runs from merging into longer
    # off-grid runs)
    middle0 = _grid_slots(512, sec0 - 512)[::2]
    middle1 = _grid_slots(512, sec1 - 512)[::2]
    slots = [(0, off) for off in middle0] + [(1, off) for off in middle1]
    n_extra_sigs = int(rng.integers(4, 8))
    chosen = rng.choice(len(slots), size=n_extra_sigs, replace=False)
    for j in range(n_extra_sigs):
        which, off = slots[int(chosen[j])]
        _plant_guarded(p0 if which == 0 else p1, int(off), sig)

    # guaranteed far-apart pair: one near the file head, one near the tail
    pos_a = 64 + GRID * int(rng.integers(0, 25))
    pos_b = sec1 - SIG_LEN - GRID * int(rng.integers(0, 25))
    _plant_guarded(p0, pos_a, sig)
    _plant_guarded(p1, pos_b, sig)
    gap = (512 + sec0 + pos_b) - (512 + pos_a)
    assert gap >= math.ceil(total / 2) + SIG_LEN, \
        "extreme plants must defeat any half-file mask"
    return build_pe([p0.tobytes(), p1.tobytes()])


def generate_corpus(spec: SynthSpec) -> List[SynthSample]:
    months = month_sequence(spec.start_month, spec.n_months)
    samples: List[SynthSample] = []

    for i in range(spec.n_benign):
        rng = np.random.default_rng([spec.seed, 0, i])
        month = months[i % len(months)]
        day = 1 + (i // len(months)) % 28
        samples.append(SynthSample(
            name=f"benign_{i:05d}.bin", data=_build_benign(rng, spec),
            label=0, timestamp=f"{month}-{day:02d}"))

    # per-month malicious counts under round-robin assignment
    month_counts = [(spec.n_malicious - mi - 1) // spec.n_months + 1
                    if mi < spec.n_malicious else 0
                    for mi in range(spec.n_months)]
    for i in range(spec.n_malicious):
        rng = np.random.default_rng([spec.seed, 1, i])
        mi = i % spec.n_months
        rank = i // spec.n_months
        q = min(1.0, spec.drift_per_month * mi)
        drifted = rank < math.floor(q * month_counts[mi])
        family = spec.families[i % len(spec.families)]
        day = 1 + rank % 28
        samples.append(SynthSample(
            name=f"mal_{i:05d}.bin",
            data=_build_malicious(rng, spec, family, mi, drifted),
            label=1, timestamp=f"{months[mi]}-{day:02d}", family=family))
    return samples


def write_corpus(samples: Sequence[SynthSample], out_dir) -> Path:
    out = Path(out_dir)
    (out / "files").mkdir(parents=True, exist_ok=True)
    for s in samples:
        (out / "files" / s.name).write_bytes(s.data)
    manifest = out / "manifest.csv"
    write_manifest([s.record() for s in samples], manifest)
    return manifest


def load_samples(manifest_path) -> List[Tuple[bytes, ManifestRecord]]:
    manifest_path = Path(manifest_path)
    records = load_manifest(manifest_path)
    root = manifest_path.parent
    return [((root / r.path).read_bytes(), r) for r in records]
