"""Minimal PE (portable executable) substrate for structural byte attacks.

Parses just enough of the format to relocate and grow section raw data
safely: DOS header, COFF header, the optional-header fields the transforms
must update (alignments, header/image sizes, entry point), and the section
table.  Everything else (DOS stub, data directories, gap padding, overlay)
is carried as opaque bytes, so serialize(parse(data)) reproduces the input
bit for bit for every file parse accepts.

Transforms are pure: they return a new image plus the file-offset ranges of
the bytes they introduced.  New bytes are always zero-filled; writing payload
content into them is the attack layer's job.

Layout restrictions (checked at parse): section raw ranges are disjoint, in
file order, after the section table, and aligned to file_alignment.  Real
linkers emit exactly this shape.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

_COFF_FMT = "<HHIIIHH"
_SECTION_FMT = "<8sIIIIIIHHI"
SECTION_ENTRY_SIZE = struct.calcsize(_SECTION_FMT)  # 40
MAX_SECTIONS = 96
_U32_MAX = 0xFFFFFFFF

# offsets of patched fields within the optional header
_OPT_ENTRY_POINT = 16
_OPT_SECTION_ALIGNMENT = 32
_OPT_FILE_ALIGNMENT = 36
_OPT_SIZE_OF_IMAGE = 56
_OPT_SIZE_OF_HEADERS = 60
_OPT_MIN_SIZE = 64

NEW_SECTION_CHARACTERISTICS = 0x40000040  # initialized data | readable


class PEFormatError(ValueError):
    """Raised when bytes cannot be parsed as a supported PE layout or an
    image violates its structural invariants at serialization."""


def align_up(value: int, alignment: int) -> int:
    return -(-value // alignment) * alignment


@dataclass(frozen=True)
class SectionEntry:
    name: bytes
    virtual_size: int
    virtual_address: int
    size_of_raw_data: int
    pointer_to_raw_data: int
    pointer_to_relocations: int = 0
    pointer_to_line_numbers: int = 0
    number_of_relocations: int = 0
    number_of_line_numbers: int = 0
    characteristics: int = NEW_SECTION_CHARACTERISTICS

    def __post_init__(self):
        if len(self.name) > 8:
            raise PEFormatError(f"section name {self.name!r} longer than 8 bytes")
        object.__setattr__(self, "name", self.name.ljust(8, b"\x00"))
        for field in ("virtual_size", "virtual_address", "size_of_raw_data",
                      "pointer_to_raw_data", "characteristics"):
            v = getattr(self, field)
            if not 0 <= v <= _U32_MAX:
                raise PEFormatError(f"section {field} {v} out of u32 range")

    def pack(self) -> bytes:
        return struct.pack(_SECTION_FMT, self.name, self.virtual_size,
                           self.virtual_address, self.size_of_raw_data,
                           self.pointer_to_raw_data, self.pointer_to_relocations,
                           self.pointer_to_line_numbers, self.number_of_relocations,
                           self.number_of_line_numbers, self.characteristics)

    @classmethod
    def unpack(cls, buf: bytes, offset: int) -> "SectionEntry":
        vals = struct.unpack_from(_SECTION_FMT, buf, offset)
        return cls(*vals)


@dataclass(frozen=True)
class PEImage:
    """Parsed image: pre_table carries every byte before the section table
    verbatim; patchable header fields are mirrored as attributes and written
    back into pre_table at serialization."""

    pre_table: bytes
    sections: Tuple[SectionEntry, ...]
    section_data: Tuple[bytes, ...]   # raw payload per section ('' if none)
    gaps: Tuple[bytes, ...]           # bytes preceding each section's raw data
    overlay: bytes
    e_lfanew: int
    coff_number_of_sections: int
    optional_magic: int
    entry_point: int
    section_alignment: int
    file_alignment: int
    size_of_image: int
    size_of_headers: int

    @property
    def table_offset(self) -> int:
        return len(self.pre_table)

    @property
    def table_end(self) -> int:
        return len(self.pre_table) + SECTION_ENTRY_SIZE * len(self.sections)

    def raw_section_indices(self) -> List[int]:
        return [i for i, s in enumerate(self.sections) if s.size_of_raw_data > 0]

    @property
    def total_size(self) -> int:
        return (self.table_end + sum(len(g) for g in self.gaps)
                + sum(len(d) for d in self.section_data) + len(self.overlay))


def _require(cond: bool, message: str):
    if not cond:
        raise PEFormatError(message)


def _power_of_two(v: int) -> bool:
    return v > 0 and (v & (v - 1)) == 0


def parse_pe(data: bytes) -> PEImage:
    data = bytes(data)
    _require(len(data) >= 64 and data[:2] == b"MZ", "missing MZ magic")
    (e_lfanew,) = struct.unpack_from("<I", data, 0x3C)
    _require(64 <= e_lfanew and e_lfanew + 4 <= len(data), "e_lfanew out of bounds")
    _require(data[e_lfanew:e_lfanew + 4] == b"PE\x00\x00", "missing PE signature")

    coff_off = e_lfanew + 4
    _require(coff_off + 20 <= len(data), "truncated COFF header")
    (_machine, num_sections, _ts, _symptr, _nsyms, opt_size,
     _chars) = struct.unpack_from(_COFF_FMT, data, coff_off)
    _require(num_sections <= MAX_SECTIONS,
             f"too many sections ({num_sections} > {MAX_SECTIONS})")

    opt_off = coff_off + 20
    _require(opt_size >= _OPT_MIN_SIZE, "optional header too small")
    _require(opt_off + opt_size <= len(data), "truncated optional header")
    (magic,) = struct.unpack_from("<H", data, opt_off)
    _require(magic in (0x10B, 0x20B),
             f"unsupported optional header magic 0x{magic:x}")
    (entry,) = struct.unpack_from("<I", data, opt_off + _OPT_ENTRY_POINT)
    (salign,) = struct.unpack_from("<I", data, opt_off + _OPT_SECTION_ALIGNMENT)
    (falign,) = struct.unpack_from("<I", data, opt_off + _OPT_FILE_ALIGNMENT)
    (simage,) = struct.unpack_from("<I", data, opt_off + _OPT_SIZE_OF_IMAGE)
    (sheaders,) = struct.unpack_from("<I", data, opt_off + _OPT_SIZE_OF_HEADERS)
    _require(_power_of_two(falign), f"file_alignment {falign} not a power of two")
    _require(_power_of_two(salign), f"section_alignment {salign} not a power of two")

    table_off = opt_off + opt_size
    table_end = table_off + SECTION_ENTRY_SIZE * num_sections
    _require(table_end <= len(data), "truncated section table")
    sections = tuple(SectionEntry.unpack(data, table_off + SECTION_ENTRY_SIZE * i)
                     for i in range(num_sections))

    gaps: List[bytes] = []
    payloads: List[bytes] = []
    cursor = table_end
    for i, s in enumerate(sections):
        _require(s.virtual_address % salign == 0,
                 f"section {i} virtual address {s.virtual_address:#x} unaligned")
        if s.size_of_raw_data == 0:
            gaps.append(b"")
            payloads.append(b"")
            continue
        _require(s.pointer_to_raw_data % falign == 0,
                 f"section {i} raw pointer {s.pointer_to_raw_data:#x} unaligned")
        _require(s.pointer_to_raw_data >= cursor,
                 f"section {i} raw range overlaps or is out of file order")
        end = s.pointer_to_raw_data + s.size_of_raw_data
        _require(end <= len(data), f"truncated section {i} data")
        gaps.append(data[cursor:s.pointer_to_raw_data])
        payloads.append(data[s.pointer_to_raw_data:end])
        cursor = end

    return PEImage(
        pre_table=data[:table_off],
        sections=sections,
        section_data=tuple(payloads),
        gaps=tuple(gaps),
        overlay=data[cursor:],
        e_lfanew=e_lfanew,
        coff_number_of_sections=num_sections,
        optional_magic=magic,
        entry_point=entry,
        section_alignment=salign,
        file_alignment=falign,
        size_of_image=simage,
        size_of_headers=sheaders,
    )


def serialize_pe(img: PEImage) -> bytes:
    n = len(img.sections)
    _require(img.coff_number_of_sections == n,
             f"number_of_sections {img.coff_number_of_sections} != |table| {n}")
    _require(n <= MAX_SECTIONS, f"too many sections ({n} > {MAX_SECTIONS})")
    _require(len(img.section_data) == n and len(img.gaps) == n,
             "section_data/gaps must align with the section table")
    for name in ("entry_point", "size_of_image", "size_of_headers"):
        v = getattr(img, name)
        _require(0 <= v <= _U32_MAX, f"{name} {v} out of u32 range")

    cursor = img.table_end
    for i, s in enumerate(img.sections):
        _require(len(img.section_data[i]) == s.size_of_raw_data,
                 f"section {i} carries {len(img.section_data[i])} bytes but "
                 f"declares {s.size_of_raw_data}")
        if s.size_of_raw_data == 0:
            continue
        _require(s.pointer_to_raw_data % img.file_alignment == 0,
                 f"section {i} raw pointer {s.pointer_to_raw_data:#x} unaligned")
        expected = cursor + len(img.gaps[i])
        _require(s.pointer_to_raw_data == expected,
                 f"section {i} pointer {s.pointer_to_raw_data:#x} does not match "
                 f"layout position {expected:#x}")
        cursor = s.pointer_to_raw_data + s.size_of_raw_data

    pre = bytearray(img.pre_table)
    opt_off = img.e_lfanew + 24
    struct.pack_into("<H", pre, img.e_lfanew + 6, img.coff_number_of_sections)
    struct.pack_into("<I", pre, opt_off + _OPT_ENTRY_POINT, img.entry_point)
    struct.pack_into("<I", pre, opt_off + _OPT_SECTION_ALIGNMENT, img.section_alignment)
    struct.pack_into("<I", pre, opt_off + _OPT_FILE_ALIGNMENT, img.file_alignment)
    struct.pack_into("<I", pre, opt_off + _OPT_SIZE_OF_IMAGE, img.size_of_image)
    struct.pack_into("<I", pre, opt_off + _OPT_SIZE_OF_HEADERS, img.size_of_headers)

    out = bytearray(pre)
    for s in img.sections:
        out += s.pack()
    for gap, payload in zip(img.gaps, img.section_data):
        out += gap
        out += payload
    out += img.overlay
    return bytes(out)


# ---------------------------------------------------------------------- #
# transforms                                                             #
# ---------------------------------------------------------------------- #

def append_overlay(img: PEImage, payload: bytes) -> PEImage:
    """Append bytes after everything else; no header field changes."""
    return replace(img, overlay=img.overlay + bytes(payload))


def shift_insert(img: PEImage, gap_size: int) -> Tuple[PEImage, Tuple[int, int]]:
    """Insert a zero-filled, alignment-rounded gap just before the first
    section's raw data.  Every raw pointer and size_of_headers grow by the
    aligned gap; returns (image', (offset, aligned_size))."""
    if gap_size < 1:
        raise PEFormatError(f"gap_size must be >= 1, got {gap_size}")
    raw_idx = img.raw_section_indices()
    if not raw_idx:
        raise PEFormatError("no section raw data to shift")
    g = align_up(gap_size, img.file_alignment)
    first = raw_idx[0]
    insert_at = img.sections[first].pointer_to_raw_data
    sections = []
    for s in img.sections:
        if s.size_of_raw_data == 0:
            sections.append(s)
            continue
        moved = s.pointer_to_raw_data + g
        if moved > _U32_MAX:
            raise PEFormatError("alignment overflow: raw pointer exceeds u32")
        sections.append(replace(s, pointer_to_raw_data=moved))
    gaps = list(img.gaps)
    gaps[first] = gaps[first] + b"\x00" * g
    new = replace(img, sections=tuple(sections), gaps=tuple(gaps),
                  size_of_headers=img.size_of_headers + g)
    return new, (insert_at, g)


def carve_caves(img: PEImage, cave_sizes: Sequence[int]
                ) -> Tuple[PEImage, List[Tuple[int, int]]]:
    """Grow section raw data in place: cave i (alignment-rounded, zero
    filled) is appended after section i's raw bytes and later raw pointers
    shift by the accumulated growth.  virtual_size is untouched, so the cave
    shows up as slack.  A zero cave size means no cave for that section.
    Returns (image', [(offset, requested_size), ...]) aligned with cave_sizes."""
    if len(cave_sizes) > len(img.sections):
        raise PEFormatError(
            f"{len(cave_sizes)} cave sizes for {len(img.sections)} sections")
    sizes = list(cave_sizes) + [0] * (len(img.sections) - len(cave_sizes))
    sections: List[SectionEntry] = []
    data: List[bytes] = []
    ranges: List[Tuple[int, int]] = []
    shift = 0
    for i, (s, want) in enumerate(zip(img.sections, sizes)):
        if want < 0:
            raise PEFormatError(f"cave size must be >= 0, got {want}")
        if want > 0 and s.size_of_raw_data == 0:
            raise PEFormatError(f"cannot carve a cave in empty section {i}")
        new_ptr = s.pointer_to_raw_data + (shift if s.size_of_raw_data else 0)
        if want == 0:
            sections.append(s if shift == 0 or s.size_of_raw_data == 0
                            else replace(s, pointer_to_raw_data=new_ptr))
            data.append(img.section_data[i])
            if i < len(cave_sizes):
                ranges.append((new_ptr + s.size_of_raw_data, 0))
            continue
        grown = align_up(want, img.file_alignment)
        ranges.append((new_ptr + s.size_of_raw_data, want))
        sections.append(replace(s, pointer_to_raw_data=new_ptr,
                                size_of_raw_data=s.size_of_raw_data + grown))
        data.append(img.section_data[i] + b"\x00" * grown)
        shift += grown
    new = replace(img, sections=tuple(sections), section_data=tuple(data))
    return new, ranges


def inject_sections(img: PEImage, sizes: Sequence[int],
                    names: Optional[Sequence[bytes]] = None
                    ) -> Tuple[PEImage, List[Tuple[int, int]]]:
    """Append up to five new sections after the existing raw data, with
    file-aligned raw placement and section-aligned virtual placement.  The
    section table grows into the pre-section slack, or a header shift is
    applied first when the slack cannot hold the new entries.  Returns
    (image', [(raw_offset, requested_size), ...])."""
    if not 1 <= len(sizes) <= 5:
        raise PEFormatError(f"can inject 1..5 sections, got {len(sizes)}")
    if any(sz < 1 for sz in sizes):
        raise PEFormatError("section sizes must be >= 1")
    if len(img.sections) + len(sizes) > MAX_SECTIONS:
        raise PEFormatError("section table would exceed the format limit")
    raw_idx = img.raw_section_indices()
    if not raw_idx:
        raise PEFormatError("cannot place sections without existing raw layout")
    if names is None:
        names = [f".inj{i}".encode() for i in range(len(sizes))]
    if len(names) != len(sizes):
        raise PEFormatError("names must align with sizes")

    need = SECTION_ENTRY_SIZE * len(sizes)
    first = raw_idx[0]
    if len(img.gaps[first]) < need:
        img, _ = shift_insert(img, need - len(img.gaps[first]))
    gaps = list(img.gaps)
    first = img.raw_section_indices()[0]
    gaps[first] = gaps[first][need:]  # table grows into the slack

    salign = img.section_alignment
    falign = img.file_alignment
    last = img.raw_section_indices()[-1]
    raw_cursor = (img.sections[last].pointer_to_raw_data
                  + img.sections[last].size_of_raw_data)
    va_cursor = align_up(max(s.virtual_address + max(s.virtual_size, 1)
                             for s in img.sections), salign)

    sections = list(img.sections)
    data = list(img.section_data)
    ranges: List[Tuple[int, int]] = []
    for size, name in zip(sizes, names):
        raw_size = align_up(size, falign)
        ptr = align_up(raw_cursor, falign)  # raw ends are aligned already
        if va_cursor + max(size, 1) > _U32_MAX:
            raise PEFormatError("virtual address space exhausted")
        sections.append(SectionEntry(
            name=name, virtual_size=size, virtual_address=va_cursor,
            size_of_raw_data=raw_size, pointer_to_raw_data=ptr,
            characteristics=NEW_SECTION_CHARACTERISTICS))
        data.append(b"\x00" * raw_size)
        gaps.append(b"\x00" * (ptr - raw_cursor))
        ranges.append((ptr, size))
        raw_cursor = ptr + raw_size
        va_cursor = align_up(va_cursor + max(size, 1), salign)

    new = replace(
        img, sections=tuple(sections), section_data=tuple(data),
        gaps=tuple(gaps),
        coff_number_of_sections=img.coff_number_of_sections + len(sizes),
        size_of_image=va_cursor)
    return new, ranges


def slack_regions(img: PEImage) -> List[Tuple[int, int]]:
    """Byte ranges the loader ignores: per-section tails between virtual_size
    and size_of_raw_data, plus inter-structure gap padding."""
    out: List[Tuple[int, int]] = []
    cursor = img.table_end
    for i, s in enumerate(img.sections):
        if s.size_of_raw_data == 0:
            continue
        if img.gaps[i]:
            out.append((cursor, len(img.gaps[i])))
        cursor += len(img.gaps[i])
        if s.virtual_size < s.size_of_raw_data:
            out.append((cursor + s.virtual_size,
                        s.size_of_raw_data - s.virtual_size))
        cursor += s.size_of_raw_data
    return out


# ---------------------------------------------------------------------- #
# independent builder (fixtures and synthetic corpora)                   #
# ---------------------------------------------------------------------- #

def build_pe(section_payloads: Sequence[bytes], *,
             names: Optional[Sequence[bytes]] = None,
             virtual_sizes: Optional[Sequence[int]] = None,
             file_alignment: int = 512, section_alignment: int = 4096,
             overlay: bytes = b"", dos_stub: bytes = b"",
             gaps_before: Optional[Sequence[int]] = None,
             entry_point: Optional[int] = None,
             machine: int = 0x014C, timestamp: int = 0) -> bytes:
    """Assemble a small well-formed PE32 directly (independent of
    PEImage/serialize_pe, so round-trip tests have a second route).

    Each payload becomes one section with raw size rounded up to
    file_alignment; virtual sizes default to the unpadded payload length,
    leaving slack.  gaps_before inserts zero padding (multiples of
    file_alignment) before a section's raw data.
    """
    n = len(section_payloads)
    if n < 1:
        raise ValueError("need at least one section payload")
    if not _power_of_two(file_alignment) or not _power_of_two(section_alignment):
        raise ValueError("alignments must be powers of two")
    default_names = [b".text", b".data", b".rdata", b".rsrc", b".reloc"]
    if names is None:
        names = [default_names[i % len(default_names)] for i in range(n)]
    if virtual_sizes is None:
        virtual_sizes = [len(p) for p in section_payloads]
    if gaps_before is None:
        gaps_before = [0] * n
    if any(g % file_alignment for g in gaps_before):
        raise ValueError("gaps_before must be multiples of file_alignment")

    e_lfanew = 64 + len(dos_stub)
    opt_size = 224  # PE32 with 16 zeroed data directories
    table_off = e_lfanew + 4 + 20 + opt_size
    table_end = table_off + SECTION_ENTRY_SIZE * n
    size_of_headers = align_up(table_end, file_alignment)

    entries = []
    raw_cursor = size_of_headers
    va_cursor = section_alignment
    for i, payload in enumerate(section_payloads):
        raw_size = align_up(max(len(payload), 1), file_alignment)
        raw_cursor += gaps_before[i]
        vsize = virtual_sizes[i]
        chars = 0x60000020 if i == 0 else 0x40000040  # code vs data section
        entries.append(SectionEntry(
            name=names[i], virtual_size=vsize, virtual_address=va_cursor,
            size_of_raw_data=raw_size, pointer_to_raw_data=raw_cursor,
            characteristics=chars))
        raw_cursor += raw_size
        va_cursor = align_up(va_cursor + max(vsize, 1), section_alignment)

    if entry_point is None:
        entry_point = entries[0].virtual_address

    dos = bytearray(64)
    dos[:2] = b"MZ"
    struct.pack_into("<I", dos, 0x3C, e_lfanew)

    coff = struct.pack(_COFF_FMT, machine, n, timestamp, 0, 0, opt_size, 0x0102)

    opt = bytearray(opt_size)
    struct.pack_into("<H", opt, 0, 0x10B)
    struct.pack_into("<I", opt, _OPT_ENTRY_POINT, entry_point)
    struct.pack_into("<I", opt, 28, 0x400000)  # image base
    struct.pack_into("<I", opt, _OPT_SECTION_ALIGNMENT, section_alignment)
    struct.pack_into("<I", opt, _OPT_FILE_ALIGNMENT, file_alignment)
    struct.pack_into("<I", opt, _OPT_SIZE_OF_IMAGE, va_cursor)
    struct.pack_into("<I", opt, _OPT_SIZE_OF_HEADERS, size_of_headers)

    out = bytearray()
    out += dos
    out += dos_stub
    out += b"PE\x00\x00"
    out += coff
    out += opt
    for e in entries:
        out += e.pack()
    out += b"\x00" * (size_of_headers - table_end)
    for i, payload in enumerate(section_payloads):
        out += b"\x00" * gaps_before[i]
        out += payload
        out += b"\x00" * (entries[i].size_of_raw_data - len(payload))
    out += overlay
    return bytes(out)
