"""In-memory decomposition of a PE file.

Every header keeps its original bytes in ``raw``; only the fields that the
manipulations read or write are lifted into attributes. ``to_bytes`` patches
those attributes back over ``raw``, so anything not modelled here survives a
round trip untouched.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import List, Tuple

DOS_HEADER_SIZE = 0x40
E_LFANEW_OFFSET = 0x3C
PE_SIGNATURE = b"PE\0\0"
COFF_HEADER_SIZE = 20
SECTION_HEADER_SIZE = 40

PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

# byte offsets inside the optional header; identical for PE32 and PE32+
# except where noted
_OPT_ENTRY_POINT = 16
_OPT_SECTION_ALIGNMENT = 32
_OPT_FILE_ALIGNMENT = 36
_OPT_SIZE_OF_IMAGE = 56
_OPT_SIZE_OF_HEADERS = 60
_OPT_CHECKSUM = 64
_OPT_FIXED_SIZE = {PE32_MAGIC: 96, PE32PLUS_MAGIC: 112}

IMAGE_SCN_CNT_CODE = 0x00000020
IMAGE_SCN_CNT_INITIALIZED_DATA = 0x00000040
IMAGE_SCN_MEM_EXECUTE = 0x20000000
IMAGE_SCN_MEM_READ = 0x40000000
IMAGE_SCN_MEM_WRITE = 0x80000000


@dataclass
class DosHeader:
    e_magic: bytes
    e_lfanew: int
    raw: bytes
    stub_bytes: bytes = b""

    def to_bytes(self) -> bytes:
        buf = bytearray(self.raw)
        buf[0:2] = self.e_magic
        struct.pack_into("<I", buf, E_LFANEW_OFFSET, self.e_lfanew)
        return bytes(buf) + self.stub_bytes


@dataclass
class CoffHeader:
    machine: int
    number_of_sections: int
    size_of_optional_header: int
    characteristics: int
    raw: bytes

    def to_bytes(self) -> bytes:
        buf = bytearray(self.raw)
        struct.pack_into("<HH", buf, 0, self.machine, self.number_of_sections)
        struct.pack_into("<HH", buf, 16, self.size_of_optional_header,
                         self.characteristics)
        return bytes(buf)

    @property
    def timestamp(self) -> int:
        return struct.unpack_from("<I", self.raw, 4)[0]


@dataclass
class OptionalHeader:
    format_magic: int
    address_of_entry_point: int
    section_alignment: int
    file_alignment: int
    size_of_image: int
    size_of_headers: int
    checksum: int
    data_directories: Tuple[Tuple[int, int], ...]
    raw: bytes

    @property
    def is_pe32plus(self) -> bool:
        return self.format_magic == PE32PLUS_MAGIC

    @property
    def data_directory_offset(self) -> int:
        return _OPT_FIXED_SIZE[self.format_magic]

    def to_bytes(self) -> bytes:
        buf = bytearray(self.raw)
        struct.pack_into("<H", buf, 0, self.format_magic)
        struct.pack_into("<I", buf, _OPT_ENTRY_POINT, self.address_of_entry_point)
        struct.pack_into("<II", buf, _OPT_SECTION_ALIGNMENT,
                         self.section_alignment, self.file_alignment)
        struct.pack_into("<III", buf, _OPT_SIZE_OF_IMAGE, self.size_of_image,
                         self.size_of_headers, self.checksum)
        base = self.data_directory_offset
        for i, (rva, size) in enumerate(self.data_directories):
            struct.pack_into("<II", buf, base + 8 * i, rva, size)
        return bytes(buf)


@dataclass
class SectionHeader:
    name: bytes
    virtual_size: int
    virtual_address: int
    size_of_raw_data: int
    pointer_to_raw_data: int
    characteristics: int
    raw: bytes = bytes(SECTION_HEADER_SIZE)

    def __post_init__(self):
        if len(self.name) != 8:
            self.name = self.name[:8].ljust(8, b"\0")

    @property
    def name_str(self) -> str:
        return self.name.rstrip(b"\0").decode("latin-1")

    @property
    def raw_end(self) -> int:
        return self.pointer_to_raw_data + self.size_of_raw_data

    @property
    def virtual_extent(self) -> int:
        """Bytes the loader maps for this section before alignment."""
        return self.virtual_size or self.size_of_raw_data

    def to_bytes(self) -> bytes:
        buf = bytearray(self.raw)
        buf[0:8] = self.name
        struct.pack_into("<IIII", buf, 8, self.virtual_size,
                         self.virtual_address, self.size_of_raw_data,
                         self.pointer_to_raw_data)
        struct.pack_into("<I", buf, 36, self.characteristics)
        return bytes(buf)


@dataclass
class PeFile:
    """A parsed executable.

    ``slack`` holds non-zero bytes that no header or section owns (for
    instance alignment gaps between sections) as ``(offset, bytes)`` pairs;
    any other unowned byte is zero and is re-created by the serializer.
    """

    dos: DosHeader
    coff: CoffHeader
    optional: OptionalHeader
    section_headers: List[SectionHeader]
    section_data: List[bytes]
    header_padding: bytes = b""
    overlay: bytes = b""
    slack: List[Tuple[int, bytes]] = field(default_factory=list)

    @property
    def section_table_offset(self) -> int:
        return (self.dos.e_lfanew + len(PE_SIGNATURE) + COFF_HEADER_SIZE
                + self.coff.size_of_optional_header)

    @property
    def section_table_end(self) -> int:
        return (self.section_table_offset
                + SECTION_HEADER_SIZE * len(self.section_headers))

    @property
    def data_end(self) -> int:
        """File offset where the overlay starts."""
        end = self.section_table_end + len(self.header_padding)
        for hdr in self.section_headers:
            if hdr.size_of_raw_data:
                end = max(end, hdr.raw_end)
        for offset, blob in self.slack:
            end = max(end, offset + len(blob))
        return end

    @property
    def image_end(self) -> int:
        """Unaligned RVA just past the last mapped section."""
        ends = [h.virtual_address + h.virtual_extent for h in self.section_headers]
        return max(ends, default=self.optional.size_of_headers)

    def copy(self) -> "PeFile":
        """Copy deep enough that editing headers never aliases ``self``."""
        return replace(
            self,
            dos=replace(self.dos),
            coff=replace(self.coff),
            optional=replace(self.optional),
            section_headers=[replace(h) for h in self.section_headers],
            section_data=list(self.section_data),
            slack=list(self.slack),
        )
