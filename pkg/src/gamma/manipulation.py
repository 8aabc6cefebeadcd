"""Functionality-preserving content injection and its size penalty.

``apply`` takes the first ``floor(s_i * c_i)`` bytes of each corpus section
and injects them, in index order, either as trailing padding (overlay) or
as one new read-only section per non-empty payload.
"""
from __future__ import annotations

import enum

import numpy as np

from .corpus import PayloadCorpus
from .exceptions import LayoutOverflow, ManipulationError
from .pe import PeFile, SectionHeader, align_up, serialize
from .pe.structures import (IMAGE_SCN_CNT_INITIALIZED_DATA, IMAGE_SCN_MEM_READ,
                            SECTION_HEADER_SIZE)
from .utils.validation import check_manipulation_vector

INJECTED_CHARACTERISTICS = IMAGE_SCN_CNT_INITIALIZED_DATA | IMAGE_SCN_MEM_READ
_U32 = 0xFFFFFFFF


class InjectionMode(str, enum.Enum):
    PADDING = "padding"
    SECTION_INJECTION = "section-injection"

    def __str__(self):
        return self.value


def payload_lengths(s, corpus: PayloadCorpus) -> np.ndarray:
    """Bytes taken from each corpus section: ``floor(s_i * c_i)``."""
    s = check_manipulation_vector(s, corpus.k)
    return np.floor(s * corpus.sizes).astype(np.int64)


def penalty(s, corpus: PayloadCorpus) -> float:
    """Size penalty ``c^T s``."""
    s = check_manipulation_vector(s, corpus.k)
    return float(np.dot(corpus.sizes.astype(np.float64), s))


def _payloads(s, corpus):
    lengths = payload_lengths(s, corpus)
    return [(sec.source_name, sec.content[:n])
            for sec, n in zip(corpus.sections, lengths) if n > 0]


def _injected_name(source_name: bytes, ordinal: int) -> bytes:
    stem = source_name.rstrip(b"\0")[:7]
    return (stem + str(ordinal % 10).encode()).ljust(8, b"\0")


def _check_u32(value: int, what: str) -> int:
    if value > _U32:
        raise LayoutOverflow(f"{what} {value:#x} does not fit in 32 bits")
    return value


def _inject_sections(pe: PeFile, payloads) -> PeFile:
    out = pe.copy()
    opt = out.optional
    fa, sa = opt.file_alignment, opt.section_alignment
    m = len(payloads)
    if len(out.section_headers) + m > 0xFFFF:
        raise LayoutOverflow("section count exceeds 16 bits")

    grown_table_end = out.section_table_end + SECTION_HEADER_SIZE * m
    need = SECTION_HEADER_SIZE * m
    if grown_table_end <= opt.size_of_headers and len(out.header_padding) >= need:
        if any(out.header_padding[:need]):
            raise ManipulationError("header slack after the section table "
                                    "holds data; cannot grow the table in place")
        out.header_padding = out.header_padding[need:]
    else:
        if any(out.header_padding):
            raise ManipulationError("header slack holds data; cannot shift it")
        delta = align_up(grown_table_end - opt.size_of_headers, fa)
        opt.size_of_headers = _check_u32(opt.size_of_headers + delta,
                                         "size_of_headers")
        for hdr in out.section_headers:
            if hdr.size_of_raw_data:
                hdr.pointer_to_raw_data = _check_u32(
                    hdr.pointer_to_raw_data + delta, "pointer_to_raw_data")
        out.slack = [(off + delta, blob) for off, blob in out.slack]
        out.header_padding = bytes(opt.size_of_headers - grown_table_end)

    raw_cursor = align_up(out.data_end, fa)
    va_cursor = align_up(out.image_end, sa)
    for ordinal, (name, payload) in enumerate(payloads):
        raw_size = align_up(len(payload), fa)
        hdr = SectionHeader(_injected_name(name, ordinal), len(payload),
                            _check_u32(va_cursor, "virtual_address"), raw_size,
                            _check_u32(raw_cursor, "pointer_to_raw_data"),
                            INJECTED_CHARACTERISTICS)
        out.section_headers.append(hdr)
        out.section_data.append(payload + bytes(raw_size - len(payload)))
        raw_cursor += raw_size
        va_cursor = align_up(va_cursor + len(payload), sa)
    _check_u32(raw_cursor + len(out.overlay), "file size")
    opt.size_of_image = _check_u32(max(opt.size_of_image, va_cursor),
                                   "size_of_image")
    out.coff.number_of_sections = len(out.section_headers)
    return out


def apply(pe: PeFile, s, corpus: PayloadCorpus,
          mode: InjectionMode = InjectionMode.PADDING) -> PeFile:
    """Return ``pe`` manipulated by vector ``s``; ``pe`` is not modified.

    ``pe`` is expected to pass :func:`gamma.pe.validate`. Entry point, data
    directories, and every original section's addresses, flags and bytes
    are preserved in both modes.
    """
    mode = InjectionMode(mode)
    payloads = _payloads(s, corpus)
    if not payloads:
        return pe.copy()
    if mode is InjectionMode.PADDING:
        out = pe.copy()
        out.overlay = pe.overlay + b"".join(p for _, p in payloads)
        return out
    return _inject_sections(pe, payloads)


def injected_size(original: PeFile, manipulated: PeFile) -> int:
    """On-disk growth in bytes, alignment and header overhead included."""
    return len(serialize(manipulated)) - len(serialize(original))
