"""Byte-exact parsing and serialization of PE executables."""
from __future__ import annotations

import struct

import numpy as np

from ..exceptions import (BadMzMagic, BadPeMagic, BadPeOffset,
                          MalformedSectionTable, OverlappingLayout,
                          TruncatedHeader, ZeroAlignment)
from .structures import (_OPT_CHECKSUM, _OPT_ENTRY_POINT, _OPT_FIXED_SIZE,
                         _OPT_SECTION_ALIGNMENT, _OPT_SIZE_OF_IMAGE,
                         COFF_HEADER_SIZE, DOS_HEADER_SIZE, E_LFANEW_OFFSET,
                         PE_SIGNATURE, SECTION_HEADER_SIZE, CoffHeader,
                         DosHeader, OptionalHeader, PeFile, SectionHeader)

__all__ = ["align_up", "parse", "serialize", "pe_checksum"]


def align_up(value: int, alignment: int) -> int:
    """Smallest multiple of ``alignment`` that is >= ``value``.

    >>> align_up(0x201, 0x200)
    1024
    """
    if alignment == 0:
        raise ZeroAlignment("alignment must be a power of two >= 1")
    if alignment < 0 or alignment & (alignment - 1):
        raise ValueError(f"alignment {alignment:#x} is not a power of two")
    return (value + alignment - 1) & ~(alignment - 1)


def _parse_optional(data: bytes, offset: int, size: int) -> OptionalHeader:
    if size < 2:
        raise TruncatedHeader("optional header too small for its magic", offset)
    magic = struct.unpack_from("<H", data, offset)[0]
    if magic not in _OPT_FIXED_SIZE:
        raise BadPeMagic(f"unknown optional header magic {magic:#x}", offset)
    fixed = _OPT_FIXED_SIZE[magic]
    if size < fixed:
        raise TruncatedHeader(
            f"optional header is {size} bytes, {fixed} required", offset)
    raw = bytes(data[offset:offset + size])
    entry = struct.unpack_from("<I", raw, _OPT_ENTRY_POINT)[0]
    section_alignment, file_alignment = struct.unpack_from(
        "<II", raw, _OPT_SECTION_ALIGNMENT)
    size_of_image, size_of_headers, checksum = struct.unpack_from(
        "<III", raw, _OPT_SIZE_OF_IMAGE)
    n_rva = struct.unpack_from("<I", raw, fixed - 4)[0]
    n_dirs = min(n_rva, (size - fixed) // 8)
    dirs = tuple(struct.unpack_from("<II", raw, fixed + 8 * i)
                 for i in range(n_dirs))
    return OptionalHeader(magic, entry, section_alignment, file_alignment,
                          size_of_image, size_of_headers, checksum, dirs, raw)


def parse(data: bytes) -> PeFile:
    """Decompose ``data`` into a :class:`PeFile`.

    Never reads outside ``data``. Anything that cannot be laid out again
    byte-for-byte (section data outside the file, sections overlapping the
    headers or each other) is rejected with a :class:`PEFormatError`
    subclass carrying the offending offset.
    """
    data = bytes(data)
    n = len(data)
    if data[:2] != b"MZ":
        raise BadMzMagic("missing MZ signature", 0)
    if n < DOS_HEADER_SIZE:
        raise TruncatedHeader("DOS header truncated", 0)
    e_lfanew = struct.unpack_from("<I", data, E_LFANEW_OFFSET)[0]
    # e_lfanew < 0x40 would overlap the DOS header; rejected on purpose
    if e_lfanew < DOS_HEADER_SIZE or e_lfanew + len(PE_SIGNATURE) > n:
        raise BadPeOffset(f"e_lfanew {e_lfanew:#x} out of bounds",
                          E_LFANEW_OFFSET)
    if data[e_lfanew:e_lfanew + 4] != PE_SIGNATURE:
        raise BadPeMagic("missing PE\\0\\0 signature", e_lfanew)
    dos = DosHeader(data[:2], e_lfanew, data[:DOS_HEADER_SIZE],
                    data[DOS_HEADER_SIZE:e_lfanew])

    coff_off = e_lfanew + len(PE_SIGNATURE)
    if coff_off + COFF_HEADER_SIZE > n:
        raise TruncatedHeader("COFF header truncated", coff_off)
    coff_raw = data[coff_off:coff_off + COFF_HEADER_SIZE]
    machine, n_sections = struct.unpack_from("<HH", coff_raw, 0)
    opt_size, characteristics = struct.unpack_from("<HH", coff_raw, 16)
    coff = CoffHeader(machine, n_sections, opt_size, characteristics, coff_raw)

    opt_off = coff_off + COFF_HEADER_SIZE
    if opt_off + opt_size > n:
        raise TruncatedHeader("optional header truncated", opt_off)
    optional = _parse_optional(data, opt_off, opt_size)

    table_off = opt_off + opt_size
    table_end = table_off + SECTION_HEADER_SIZE * n_sections
    if table_end > n:
        raise MalformedSectionTable(
            f"section table of {n_sections} entries exceeds file size {n}",
            table_off)

    headers, contents = [], []
    for i in range(n_sections):
        off = table_off + SECTION_HEADER_SIZE * i
        raw = data[off:off + SECTION_HEADER_SIZE]
        vsize, va, raw_size, raw_ptr = struct.unpack_from("<IIII", raw, 8)
        chars = struct.unpack_from("<I", raw, 36)[0]
        hdr = SectionHeader(raw[:8], vsize, va, raw_size, raw_ptr, chars, raw)
        if raw_size:
            if raw_ptr + raw_size > n:
                raise MalformedSectionTable(
                    f"section {i} raw data [{raw_ptr:#x}, {raw_ptr + raw_size:#x})"
                    f" exceeds file size {n:#x}", off)
            if raw_ptr < table_end:
                raise MalformedSectionTable(
                    f"section {i} raw data overlaps the headers", off)
        headers.append(hdr)
        contents.append(data[raw_ptr:raw_ptr + raw_size] if raw_size else b"")

    ranges = sorted((h.pointer_to_raw_data, h.raw_end, i)
                    for i, h in enumerate(headers) if h.size_of_raw_data)
    for (_, end_a, _), (start_b, _, j) in zip(ranges, ranges[1:]):
        if start_b < end_a:
            raise MalformedSectionTable(
                f"section {j} raw data overlaps another section",
                table_off + SECTION_HEADER_SIZE * j)

    hp_end = min(max(optional.size_of_headers, table_end), n)
    if ranges:
        hp_end = min(hp_end, ranges[0][0])
    header_padding = data[table_end:hp_end]

    slack = []
    cursor = hp_end
    for start, end, _ in ranges:
        if start > cursor and any(data[cursor:start]):
            slack.append((cursor, data[cursor:start]))
        cursor = max(cursor, end)
    data_end = cursor

    return PeFile(dos, coff, optional, headers, contents, header_padding,
                  data[data_end:], slack)


def serialize(pe: PeFile) -> bytes:
    """Lay ``pe`` out as bytes; the inverse of :func:`parse`.

    Unowned gaps are zero-filled. Raises :class:`OverlappingLayout` when two
    components claim the same byte range.
    """
    head = bytearray(pe.dos.to_bytes())
    if len(head) != pe.dos.e_lfanew:
        raise OverlappingLayout(
            f"DOS header and stub span {len(head):#x} bytes but e_lfanew is "
            f"{pe.dos.e_lfanew:#x}")
    head += PE_SIGNATURE
    head += pe.coff.to_bytes()
    opt = pe.optional.to_bytes()
    if len(opt) != pe.coff.size_of_optional_header:
        raise OverlappingLayout("optional header size disagrees with COFF header")
    head += opt
    for hdr in pe.section_headers:
        head += hdr.to_bytes()
    head += pe.header_padding

    pieces = [(0, bytes(head))]
    for hdr, content in zip(pe.section_headers, pe.section_data):
        if content:
            pieces.append((hdr.pointer_to_raw_data, content))
    pieces.extend(pe.slack)
    pieces.sort(key=lambda p: p[0])
    for (off_a, blob_a), (off_b, _) in zip(pieces, pieces[1:]):
        if off_b < off_a + len(blob_a):
            raise OverlappingLayout(
                f"range at {off_b:#x} overlaps range [{off_a:#x}, "
                f"{off_a + len(blob_a):#x})")

    data_end = max(off + len(blob) for off, blob in pieces)
    out = bytearray(data_end + len(pe.overlay))
    for off, blob in pieces:
        out[off:off + len(blob)] = blob
    out[data_end:] = pe.overlay
    return bytes(out)


def pe_checksum(data: bytes, checksum_offset: int) -> int:
    """Standard image checksum: folded 16-bit word sum plus file length."""
    buf = bytearray(data)
    buf[checksum_offset:checksum_offset + 4] = b"\0\0\0\0"
    if len(buf) % 2:
        buf.append(0)
    total = int(np.frombuffer(bytes(buf), dtype="<u2").sum(dtype=np.uint64))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return (total + len(data)) & 0xFFFFFFFF


def checksum_offset(pe: PeFile) -> int:
    return pe.dos.e_lfanew + len(PE_SIGNATURE) + COFF_HEADER_SIZE + _OPT_CHECKSUM
