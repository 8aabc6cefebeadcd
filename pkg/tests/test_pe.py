import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gamma.exceptions import (BadMzMagic, BadPeMagic, BadPeOffset,
                              MalformedSectionTable, OverlappingLayout,
                              PEFormatError, TruncatedHeader, ZeroAlignment)
from gamma.harness.fixtures import build_pe, minimal_pe
from gamma.pe import align_up, parse, serialize, validate
from gamma.pe.parser import checksum_offset, pe_checksum
from gamma.pe.validate import warnings_for

E_LFANEW = 0x80
COFF = E_LFANEW + 4
OPT = COFF + 20


def _patch(data, offset, fmt, *values):
    buf = bytearray(data)
    struct.pack_into(fmt, buf, offset, *values)
    return bytes(buf)


def test_align_up():
    assert align_up(0, 0x200) == 0
    assert align_up(1, 0x200) == 0x200
    assert align_up(0x200, 0x200) == 0x200
    assert align_up(0x201, 0x1000) == 0x1000
    with pytest.raises(ZeroAlignment):
        align_up(5, 0)
    with pytest.raises(ValueError):
        align_up(5, 3)


@given(n=st.integers(1, 6), size=st.integers(1, 3000), seed=st.integers(0, 2**16),
       plus=st.booleans(), overlay=st.binary(max_size=300))
@settings(max_examples=60, deadline=None)
def test_round_trip_property(n, size, seed, plus, overlay):
    data = minimal_pe(n, size, seed, pe32plus=plus, overlay=overlay)
    pe = parse(data)
    assert serialize(pe) == data
    assert validate(pe) == []
    assert len(pe.section_headers) == n
    assert pe.overlay == overlay


def test_fields_parsed():
    data = minimal_pe(3, 0x300, seed=1, pe32plus=True)
    pe = parse(data)
    assert pe.dos.e_lfanew == E_LFANEW
    assert pe.optional.format_magic == 0x20B
    assert pe.optional.file_alignment == 0x200
    assert pe.optional.section_alignment == 0x1000
    assert [h.name_str for h in pe.section_headers] == [".text", ".rdata", ".data"]
    # sections are laid out back to back after the headers
    ptrs = [h.pointer_to_raw_data for h in pe.section_headers]
    assert ptrs == [pe.optional.size_of_headers + 0x400 * i for i in range(3)]


def test_serialize_reflects_edits():
    pe = parse(minimal_pe(2))
    pe.optional.checksum = 0xDEADBEEF
    assert parse(serialize(pe)).optional.checksum == 0xDEADBEEF


def test_copy_is_deep():
    pe = parse(minimal_pe(2))
    dup = pe.copy()
    dup.section_headers[0].virtual_size = 1
    dup.overlay = b"x"
    assert pe.section_headers[0].virtual_size != 1
    assert pe.overlay == b""


@pytest.mark.parametrize("mutate, exc", [
    (lambda d: b"ZM" + d[2:], BadMzMagic),
    (lambda d: _patch(d, 0x3C, "<I", 0x10), BadPeOffset),
    (lambda d: _patch(d, 0x3C, "<I", len(d) + 10), BadPeOffset),
    (lambda d: _patch(d, E_LFANEW, "<4s", b"PX\0\0"), BadPeMagic),
    (lambda d: _patch(d, OPT, "<H", 0x999), BadPeMagic),
    (lambda d: d[:OPT + 10], TruncatedHeader),
    (lambda d: d[:0x30], TruncatedHeader),
    (lambda d: _patch(d, COFF + 2, "<H", 200), MalformedSectionTable),
])
def test_parse_errors(mutate, exc):
    with pytest.raises(exc) as info:
        parse(mutate(minimal_pe(2)))
    assert isinstance(info.value, PEFormatError)
    assert info.value.offset is not None


def test_raw_data_past_eof_rejected():
    data = minimal_pe(2)
    with pytest.raises(PEFormatError):
        parse(data[:-0x10])


def test_overlapping_sections_rejected():
    data = minimal_pe(2, 0x400)
    pe = parse(data)
    second = pe.section_table_offset + 40
    # point the second section's raw data into the first one
    ptr = pe.section_headers[0].pointer_to_raw_data
    with pytest.raises(MalformedSectionTable):
        parse(_patch(data, second + 20, "<I", ptr))


def test_empty_and_non_pe():
    with pytest.raises(PEFormatError):
        parse(b"")
    with pytest.raises(PEFormatError):
        parse(b"\x7fELF" + bytes(200))


@pytest.mark.parametrize("field, value, code", [
    ("size_of_image", 0x1000, "ImageSizeTooSmall"),
    ("size_of_image", 0x4001, "UnalignedImageSize"),
    ("file_alignment", 0x300, "AlignmentNotPowerOfTwo"),
    ("size_of_headers", 0x10, "HeadersTooSmall"),
])
def test_validate_optional_fields(field, value, code):
    pe = parse(minimal_pe(3))
    setattr(pe.optional, field, value)
    assert code in validate(pe)


def test_validate_section_problems():
    pe = parse(minimal_pe(3))
    pe.coff.number_of_sections = 2
    assert "SectionCountMismatch" in validate(pe)

    pe = parse(minimal_pe(3))
    pe.section_headers[1].virtual_address += 0x10
    assert "MisalignedVirtualAddress" in validate(pe)

    pe = parse(minimal_pe(3))
    pe.section_headers[2].virtual_address = pe.section_headers[0].virtual_address
    assert "UnorderedSections" in validate(pe)

    pe = parse(minimal_pe(3))
    pe.section_headers[0].virtual_size = 0x5000
    assert "OverlappingVirtualRanges" in validate(pe)

    pe = parse(minimal_pe(3))
    pe.section_data[0] = pe.section_data[0][:-1]
    assert "RawSizeMismatch" in validate(pe)

    pe = parse(minimal_pe(3))
    pe.section_headers[1].pointer_to_raw_data = pe.section_headers[0].pointer_to_raw_data
    assert "OverlappingRawData" in validate(pe)


def _checksum_oracle(data: bytes, skip: int) -> int:
    # word-by-word with an end-around carry after every add
    total = 0
    for off in range(0, len(data), 2):
        if skip <= off < skip + 4:
            continue
        word = data[off] | ((data[off + 1] if off + 1 < len(data) else 0) << 8)
        total += word
        total = (total & 0xFFFF) + (total >> 16)
    return total + len(data)


@pytest.mark.parametrize("seed", range(4))
def test_checksum_matches_oracle(seed):
    data = minimal_pe(2, 0x2FF + seed * 7, seed=seed, overlay=bytes([seed]) * (seed + 1))
    off = checksum_offset(parse(data))
    assert pe_checksum(data, off) == _checksum_oracle(data, off)


def test_stale_checksum_is_a_warning():
    pe = parse(minimal_pe(2))
    assert warnings_for(pe) == []
    pe.optional.checksum = 1
    assert warnings_for(pe) == ["StaleChecksum"]
    pe.optional.checksum = pe_checksum(serialize(pe), checksum_offset(pe))
    assert warnings_for(pe) == []
    assert validate(pe) == []


def test_header_bytes_preserved():
    data = bytearray(minimal_pe(2))
    data[0x40:0x48] = b"DOS stub"  # stub bytes must survive untouched
    pe = parse(bytes(data))
    assert serialize(pe) == bytes(data)


def test_build_pe_with_data_directories():
    rng = np.random.default_rng(0)
    sections = [(".text", rng.bytes(100), 0x60000020),
                (".rdata", rng.bytes(700), 0x40000040)]
    data = build_pe(sections, data_directories=[(0x2010, 0x28)])
    pe = parse(data)
    assert pe.optional.data_directories[0] == (0x2010, 0x28)
    assert validate(pe) == []


def test_serialize_refuses_overlap():
    pe = parse(minimal_pe(2))
    pe.section_headers[1].pointer_to_raw_data = pe.section_headers[0].pointer_to_raw_data
    with pytest.raises(OverlappingLayout):
        serialize(pe)
