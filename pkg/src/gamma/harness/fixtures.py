"""Synthetic PE fixtures with class-distinct byte statistics.

The files are structurally valid PE32/PE32+ images (they pass
:func:`gamma.pe.validate`) whose section contents are sampled from a
per-class byte distribution, with class-typical strings spliced in.
They stand in for real goodware and malware at desk scale.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from ..pe.parser import align_up
from ..pe.structures import (IMAGE_SCN_CNT_CODE, IMAGE_SCN_CNT_INITIALIZED_DATA,
                             IMAGE_SCN_MEM_EXECUTE, IMAGE_SCN_MEM_READ,
                             IMAGE_SCN_MEM_WRITE, PE32_MAGIC, PE32PLUS_MAGIC)

BENIGN = "benign-like"
MALWARE = "malware-like"

FILE_ALIGNMENT = 0x200
SECTION_ALIGNMENT = 0x1000
E_LFANEW = 0x80

CODE = IMAGE_SCN_CNT_CODE | IMAGE_SCN_MEM_EXECUTE | IMAGE_SCN_MEM_READ
RDATA = IMAGE_SCN_CNT_INITIALIZED_DATA | IMAGE_SCN_MEM_READ
DATA = RDATA | IMAGE_SCN_MEM_WRITE

_DOS_STUB = (bytes.fromhex("0e1fba0e00b409cd21b8014ccd21")
             + b"This program cannot be run in DOS mode.\r\r\n$")


@dataclass(frozen=True)
class SectionPlan:
    name: str
    size: int
    characteristics: int
    keep_prob: float = 1.0
    packed_fraction: float = 0.0


@dataclass(frozen=True)
class FixtureProfile:
    """Recipe for one class of fixtures.

    ``section_plan`` sizes are means; each generated file jitters them by a
    factor drawn from [0.5, 1.5) and drops optional sections with
    probability ``1 - keep_prob``.
    """

    label: str
    byte_distribution: np.ndarray
    section_plan: Tuple[SectionPlan, ...]
    seed: int = 0
    strings: Tuple[str, ...] = ()
    strings_per_kb: float = 2.0
    pe32plus_fraction: float = 0.25
    overlay_fraction: float = 0.2

    def __post_init__(self):
        dist = np.asarray(self.byte_distribution, dtype=float)
        if dist.shape != (256,) or (dist < 0).any():
            raise ValueError("byte_distribution must be 256 non-negative weights")
        if not np.isclose(dist.sum(), 1.0):
            raise ValueError("byte_distribution must sum to 1")
        object.__setattr__(self, "byte_distribution", dist)


def _normalized(weights):
    weights = np.asarray(weights, dtype=float)
    return weights / weights.sum()


def _benign_weights():
    w = np.full(256, 0.10 / 256)
    w[0] += 0.30
    printable = np.arange(0x20, 0x7F)
    w[printable] += 0.30 / len(printable)
    w[np.arange(ord("a"), ord("z") + 1)] += 0.15 / 26
    opcodes = [0x8B, 0x89, 0x48, 0xFF, 0xE8, 0x83, 0xC3, 0x55, 0x5D, 0xCC,
               0x90, 0x0F, 0x85, 0x74, 0x75, 0xEB]
    w[opcodes] += 0.15 / len(opcodes)
    return _normalized(w)


def benign_profile(seed: int = 7) -> FixtureProfile:
    plan = (
        SectionPlan(".text", 12288, CODE),
        SectionPlan(".rdata", 6144, RDATA),
        SectionPlan(".data", 3072, DATA),
        SectionPlan(".rsrc", 4096, RDATA, keep_prob=0.7, packed_fraction=0.6),
        SectionPlan(".reloc", 1024, RDATA, keep_prob=0.5),
    )
    strings = ("Microsoft Corporation", "C:\\Program Files\\Common Files",
               "GetProcAddress", "LoadLibraryA", "kernel32.dll", "user32.dll",
               "Copyright (c) All rights reserved", "FileVersion",
               "ProductName", "https://www.example.org/help/index.html",
               "InitializeCriticalSection", "The operation completed.",
               "HKEY_CURRENT_USER\\Software\\Classes")
    return FixtureProfile(BENIGN, _benign_weights(), plan, seed, strings,
                          strings_per_kb=6.0)


def malware_profile(seed: int = 11) -> FixtureProfile:
    w = 0.55 * np.full(256, 1 / 256) + 0.45 * _benign_weights()
    plan = (
        SectionPlan(".text", 16384, CODE, packed_fraction=0.5),
        SectionPlan(".data", 3072, DATA),
        SectionPlan(".rsrc", 3072, RDATA, keep_prob=0.3),
    )
    strings = ("HKEY_LOCAL_MACHINE\\Software\\Microsoft\\Windows\\CurrentVersion\\Run",
               "http://198.51.100.7/gate.php", "cmd.exe /c del /q",
               "C:\\Windows\\Temp\\svch0st.exe", "VirtualAllocEx",
               "WriteProcessMemory", "CreateRemoteThread")
    return FixtureProfile(MALWARE, _normalized(w), plan, seed, strings,
                          strings_per_kb=1.0)


def build_pe(sections: Sequence[Tuple[str, bytes, int]], *, pe32plus=False,
             overlay=b"", entry_section=0, data_directories=None) -> bytes:
    """Assemble a loadable-layout PE image from ``(name, content, flags)``.

    Each section's raw size is its content length rounded up to the file
    alignment; virtual addresses are packed at the section alignment.
    """
    magic = PE32PLUS_MAGIC if pe32plus else PE32_MAGIC
    opt_size = (112 if pe32plus else 96) + 16 * 8
    table_off = E_LFANEW + 4 + 20 + opt_size
    size_of_headers = align_up(table_off + 40 * len(sections), FILE_ALIGNMENT)

    headers, raw_ptr, va = [], size_of_headers, SECTION_ALIGNMENT
    for name, content, flags in sections:
        raw_size = align_up(len(content), FILE_ALIGNMENT)
        headers.append((name.encode("latin-1")[:8].ljust(8, b"\0"),
                        len(content), va, raw_size, raw_ptr, flags))
        raw_ptr += raw_size
        va = align_up(va + max(len(content), 1), SECTION_ALIGNMENT)
    size_of_image = va

    dos = bytearray(E_LFANEW)
    dos[0:2] = b"MZ"
    struct.pack_into("<HHHHHHHH", dos, 2, 0x90, 3, 0, 4, 0, 0xFFFF, 0, 0xB8)
    struct.pack_into("<H", dos, 0x18, 0x40)
    struct.pack_into("<I", dos, 0x3C, E_LFANEW)
    dos[0x40:0x40 + len(_DOS_STUB)] = _DOS_STUB

    machine = 0x8664 if pe32plus else 0x14C
    characteristics = 0x0022 if pe32plus else 0x0102
    coff = struct.pack("<HHIIIHH", machine, len(sections), 0x5F5E1000, 0, 0,
                       opt_size, characteristics)

    opt = bytearray(opt_size)
    code_size = sum(h[3] for h in headers if h[5] & IMAGE_SCN_CNT_CODE)
    entry = headers[entry_section][2] if headers else 0
    struct.pack_into("<HBBIIIII", opt, 0, magic, 14, 0, code_size, 0, 0, entry,
                     headers[0][2] if headers else 0)
    if pe32plus:
        struct.pack_into("<Q", opt, 24, 0x140000000)
    else:
        struct.pack_into("<II", opt, 24, 0, 0x400000)
    struct.pack_into("<IIHHHHHHI", opt, 32, SECTION_ALIGNMENT, FILE_ALIGNMENT,
                     6, 0, 0, 0, 6, 0, 0)
    struct.pack_into("<IIIHH", opt, 56, size_of_image, size_of_headers, 0, 2,
                     0x8140)
    fixed = 112 if pe32plus else 96
    if pe32plus:
        struct.pack_into("<QQQQII", opt, 72, 0x100000, 0x1000, 0x100000,
                         0x1000, 0, 16)
    else:
        struct.pack_into("<IIIIII", opt, 72, 0x100000, 0x1000, 0x100000,
                         0x1000, 0, 16)
    for i, (rva, size) in enumerate(data_directories or ()):
        struct.pack_into("<II", opt, fixed + 8 * i, rva, size)

    out = bytearray(dos + b"PE\0\0" + coff + opt)
    for name, vsize, va_, raw_size, ptr, flags in headers:
        out += name + struct.pack("<IIIIIIHHI", vsize, va_, raw_size, ptr, 0,
                                  0, 0, 0, flags)
    out += bytes(size_of_headers - len(out))
    for (_, content, _), hdr in zip(sections, headers):
        out += content + bytes(hdr[3] - len(content))
    return bytes(out + overlay)


def minimal_pe(n_sections: int = 2, section_size: int = 0x300, seed: int = 0,
               pe32plus: bool = False, overlay: bytes = b"") -> bytes:
    """A small fixture with ``n_sections`` random-content sections."""
    rng = np.random.default_rng(seed)
    names = [".text", ".rdata", ".data", ".rsrc", ".reloc", ".pdata",
             ".tls", ".idata"]
    sections = []
    for i in range(n_sections):
        content = rng.integers(0, 256, section_size, dtype=np.uint8).tobytes()
        sections.append((names[i % len(names)], content,
                         CODE if i == 0 else RDATA))
    return build_pe(sections, pe32plus=pe32plus, overlay=overlay)


def _section_content(rng, profile: FixtureProfile, size: int,
                     packed_fraction: float = 0.0) -> bytes:
    buf = rng.choice(256, size=size, p=profile.byte_distribution).astype(np.uint8)
    packed = int(size * packed_fraction)
    if packed:
        # a contiguous high-entropy block, like compressed data
        start = int(rng.integers(0, size - packed + 1))
        buf[start:start + packed] = rng.integers(0, 256, packed, dtype=np.uint8)
    if profile.strings:
        n_strings = rng.poisson(profile.strings_per_kb * size / 1024)
        for _ in range(n_strings):
            s = profile.strings[rng.integers(len(profile.strings))].encode() + b"\0"
            if len(s) >= size:
                continue
            pos = int(rng.integers(0, size - len(s)))
            buf[pos:pos + len(s)] = np.frombuffer(s, dtype=np.uint8)
    return buf.tobytes()


def generate_one(profile: FixtureProfile, index: int) -> bytes:
    rng = np.random.default_rng([profile.seed, index])
    sections = []
    for plan in profile.section_plan:
        keep = rng.random() < plan.keep_prob
        size = max(16, int(plan.size * rng.uniform(0.5, 1.5)))
        if keep:
            sections.append((plan.name,
                             _section_content(rng, profile, size,
                                              plan.packed_fraction),
                             plan.characteristics))
    pe32plus = bool(rng.random() < profile.pe32plus_fraction)
    overlay = b""
    if rng.random() < profile.overlay_fraction:
        overlay = _section_content(rng, profile, int(rng.integers(64, 2048)))
    dirs = []
    names = [s[0] for s in sections]
    if ".rdata" in names:
        va = SECTION_ALIGNMENT * (1 + names.index(".rdata"))
        dirs = [(0, 0), (va + 0x10, 0x28)]
    return build_pe(sections, pe32plus=pe32plus, overlay=overlay,
                    data_directories=dirs)


def generate_fixtures(profile: FixtureProfile, count: int, out_dir,
                      prefix: str = None) -> List[Path]:
    """Write ``count`` fixtures for ``profile`` into ``out_dir``.

    Output is a pure function of (profile, count). A ``manifest.json`` next
    to the files records each file's class, section count and SHA-256.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or profile.label.split("-")[0]
    paths, manifest = [], []
    for i in range(count):
        data = generate_one(profile, i)
        path = out_dir / f"{prefix}-{i:04d}.exe"
        path.write_bytes(data)
        paths.append(path)
        n_sections = struct.unpack_from("<H", data, E_LFANEW + 6)[0]
        manifest.append({"file": path.name, "label": profile.label,
                         "sections": n_sections, "size": len(data),
                         "sha256": hashlib.sha256(data).hexdigest()})
    manifest_path = out_dir / "manifest.json"
    existing = []
    if manifest_path.exists():
        existing = [e for e in json.loads(manifest_path.read_text())
                    if not e["file"].startswith(prefix + "-")]
    manifest_path.write_text(json.dumps(existing + manifest, indent=1) + "\n")
    return paths
