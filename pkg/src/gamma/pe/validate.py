"""Structural checks on a parsed PE file.

Violations are returned as data rather than raised; an empty list means the
file satisfies every layout invariant the manipulations rely on.
"""
from __future__ import annotations

from typing import List, NamedTuple

from .parser import align_up, checksum_offset, pe_checksum, serialize
from .structures import PeFile

IMAGE_SIZE_TOO_SMALL = "ImageSizeTooSmall"
MISALIGNED_RAW_DATA = "MisalignedRawData"
ALIGNMENT_NOT_POWER_OF_TWO = "AlignmentNotPowerOfTwo"
UNALIGNED_IMAGE_SIZE = "UnalignedImageSize"
UNALIGNED_HEADER_SIZE = "UnalignedHeaderSize"
HEADERS_TOO_SMALL = "HeadersTooSmall"
SECTION_COUNT_MISMATCH = "SectionCountMismatch"
RAW_SIZE_MISMATCH = "RawSizeMismatch"
OVERLAPPING_RAW_DATA = "OverlappingRawData"
SECTION_IN_HEADERS = "SectionInHeaders"
UNORDERED_SECTIONS = "UnorderedSections"
MISALIGNED_VIRTUAL_ADDRESS = "MisalignedVirtualAddress"
OVERLAPPING_VIRTUAL_RANGES = "OverlappingVirtualRanges"
STALE_CHECKSUM = "StaleChecksum"


class Violation(NamedTuple):
    code: str
    detail: str = ""

    def __eq__(self, other):
        # lets tests compare against bare codes
        if isinstance(other, str):
            return self.code == other
        return tuple.__eq__(self, other)

    def __ne__(self, other):
        return not self == other

    __hash__ = tuple.__hash__


def _is_pow2(v: int) -> bool:
    return v > 0 and not v & (v - 1)


def validate(pe: PeFile) -> List[Violation]:
    """Return every layout invariant that ``pe`` breaks."""
    out: List[Violation] = []
    opt = pe.optional
    fa, sa = opt.file_alignment, opt.section_alignment
    aligned = _is_pow2(fa) and _is_pow2(sa)
    if not aligned:
        out.append(Violation(ALIGNMENT_NOT_POWER_OF_TWO,
                             f"file {fa:#x}, section {sa:#x}"))
    if pe.coff.number_of_sections != len(pe.section_headers):
        out.append(Violation(
            SECTION_COUNT_MISMATCH,
            f"header says {pe.coff.number_of_sections}, table has "
            f"{len(pe.section_headers)}"))
    if opt.size_of_headers < pe.section_table_end:
        out.append(Violation(HEADERS_TOO_SMALL,
                             f"size_of_headers {opt.size_of_headers:#x} < "
                             f"table end {pe.section_table_end:#x}"))
    if aligned:
        if opt.size_of_image % sa:
            out.append(Violation(UNALIGNED_IMAGE_SIZE, f"{opt.size_of_image:#x}"))
        if opt.size_of_headers % fa:
            out.append(Violation(UNALIGNED_HEADER_SIZE, f"{opt.size_of_headers:#x}"))

    prev_end = None
    for i, (hdr, content) in enumerate(zip(pe.section_headers, pe.section_data)):
        if len(content) != hdr.size_of_raw_data:
            out.append(Violation(RAW_SIZE_MISMATCH, f"section {i}"))
        if hdr.size_of_raw_data:
            if aligned and (hdr.pointer_to_raw_data % fa or hdr.size_of_raw_data % fa):
                out.append(Violation(MISALIGNED_RAW_DATA, f"section {i}"))
            if hdr.pointer_to_raw_data < opt.size_of_headers:
                out.append(Violation(SECTION_IN_HEADERS, f"section {i}"))
        if aligned and hdr.virtual_address % sa:
            out.append(Violation(MISALIGNED_VIRTUAL_ADDRESS, f"section {i}"))
        if prev_end is not None:
            if hdr.virtual_address < pe.section_headers[i - 1].virtual_address:
                out.append(Violation(UNORDERED_SECTIONS, f"section {i}"))
            elif hdr.virtual_address < prev_end:
                out.append(Violation(OVERLAPPING_VIRTUAL_RANGES, f"section {i}"))
        prev_end = hdr.virtual_address + hdr.virtual_extent

    ranges = sorted((h.pointer_to_raw_data, h.raw_end)
                    for h in pe.section_headers if h.size_of_raw_data)
    for (_, end_a), (start_b, _) in zip(ranges, ranges[1:]):
        if start_b < end_a:
            out.append(Violation(OVERLAPPING_RAW_DATA, f"at {start_b:#x}"))

    if pe.section_headers and aligned:
        needed = align_up(pe.image_end, sa)
        if opt.size_of_image < needed:
            out.append(Violation(IMAGE_SIZE_TOO_SMALL,
                                 f"{opt.size_of_image:#x} < {needed:#x}"))
    return out


def warnings_for(pe: PeFile) -> List[Violation]:
    """Soft findings that do not affect loadability (currently: checksum)."""
    if pe.optional.checksum == 0:
        return []
    data = serialize(pe)
    if pe_checksum(data, checksum_offset(pe)) != pe.optional.checksum:
        return [Violation(STALE_CHECKSUM)]
    return []
