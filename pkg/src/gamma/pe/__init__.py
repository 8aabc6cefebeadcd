"""Parse, validate and re-serialize Windows PE executables."""
from .parser import align_up, parse, pe_checksum, serialize
from .structures import (SECTION_HEADER_SIZE, CoffHeader, DosHeader,
                         OptionalHeader, PeFile, SectionHeader)
from .validate import Violation, validate, warnings_for

__all__ = [
    "align_up", "parse", "serialize", "pe_checksum", "validate",
    "warnings_for", "Violation", "PeFile", "DosHeader", "CoffHeader",
    "OptionalHeader", "SectionHeader", "SECTION_HEADER_SIZE",
]
