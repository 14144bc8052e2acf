#!/usr/bin/env python3
"""Regenerate the committed PE fixtures under tests/fixtures/.

Every fixture is fully deterministic (seeded byte content, fixed timestamps),
so reruns must reproduce the committed files bit for bit; the test suite
checks that.  Run from the repository root:

    python3 scripts/make_fixtures.py
"""

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from byteshield.pe import build_pe

FIXTURE_DIR = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def _blob(seed: int, length: int) -> bytes:
    return np.random.default_rng(seed).integers(0, 256, size=length,
                                                dtype=np.uint8).tobytes()


def fixtures() -> dict:
    out = {}

    # two sections, slack in both (virtual_size < raw size), no overlay
    out["two_sections.bin"] = build_pe(
        [_blob(1, 900), _blob(2, 300)], timestamp=0x5F000001)

    # two sections plus a 123-byte overlay
    out["overlay.bin"] = build_pe(
        [_blob(3, 700), _blob(4, 450)],
        overlay=b"OVERLAY:" + _blob(5, 115), timestamp=0x5F000002)

    # three sections, a DOS stub, and file-alignment gap padding before the
    # second section's raw data
    out["gapped.bin"] = build_pe(
        [_blob(6, 512), _blob(7, 200), _blob(8, 64)],
        dos_stub=b"\x90" * 96, gaps_before=[0, 512, 0],
        timestamp=0x5F000003)

    # single section with no slack (virtual size equals padded raw size)
    payload = _blob(9, 1024)
    out["packed.bin"] = build_pe(
        [payload], virtual_sizes=[1024], timestamp=0x5F000004)

    return out


def main():
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    for name, data in fixtures().items():
        path = FIXTURE_DIR / name
        path.write_bytes(data)
        print(f"wrote {path} ({len(data)} bytes)")


if __name__ == "__main__":
    main()
