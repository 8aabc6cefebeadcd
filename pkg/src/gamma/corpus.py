"""Benign section contents that span the attack space.

A :class:`PayloadCorpus` is an ordered list of raw sections harvested from
goodware. Element ``i`` of a manipulation vector refers to section ``i``,
and the corpus' ``sizes`` vector weights the size penalty.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Sequence

import numpy as np

from .exceptions import (CorruptManifest, EmptyDirectory, GammaError,
                         MissingBlob, NoMatchingSections, SizeMismatch)
from .pe import parse

logger = logging.getLogger(__name__)

DEFAULT_NAME = ".rdata"
DEFAULT_MAX_SECTIONS = 75
DEFAULT_MAX_BYTES = 2_621_440  # 2.5 MiB
MANIFEST = "manifest.json"


class CorpusSection(NamedTuple):
    source_name: bytes
    content: bytes
    origin: str = ""


@dataclass(frozen=True)
class PayloadCorpus:
    sections: tuple

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(
            CorpusSection(*s) for s in self.sections))
        if not self.sections:
            raise ValueError("a payload corpus needs at least one section")
        if any(len(s.content) == 0 for s in self.sections):
            raise ValueError("corpus sections must be non-empty")

    @property
    def k(self) -> int:
        return len(self.sections)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s.content) for s in self.sections], dtype=np.int64)

    @property
    def total_bytes(self) -> int:
        return int(self.sizes.sum())

    def __len__(self):
        return self.k


def harvest(benign_dir, name_filter: str = DEFAULT_NAME,
            max_sections: int = DEFAULT_MAX_SECTIONS,
            max_total_bytes: int = DEFAULT_MAX_BYTES,
            seed: int = 0) -> PayloadCorpus:
    """Collect sections named ``name_filter`` from the PE files in a directory.

    Matching sections from every parseable file are pooled, shuffled with
    ``seed`` and taken in shuffled order until ``max_sections`` are held or
    the next one would push the total past ``max_total_bytes``. Files that
    do not parse are skipped. A file may contribute several sections.
    """
    benign_dir = Path(benign_dir)
    files = sorted(p for p in benign_dir.iterdir() if p.is_file()) \
        if benign_dir.is_dir() else []
    if not files:
        raise EmptyDirectory(f"no files in {benign_dir}")

    pool: List[CorpusSection] = []
    for path in files:
        try:
            pe = parse(path.read_bytes())
        except GammaError:
            continue
        for hdr, content in zip(pe.section_headers, pe.section_data):
            if hdr.name_str == name_filter and content:
                pool.append(CorpusSection(
                    hdr.name, content,
                    f"{path.name}@{hdr.pointer_to_raw_data:#x}"))
    if not pool:
        raise NoMatchingSections(
            f"no non-empty {name_filter!r} sections under {benign_dir}")

    rng = np.random.default_rng(seed)
    chosen, total = [], 0
    for idx in rng.permutation(len(pool)):
        if len(chosen) >= max_sections:
            break
        size = len(pool[idx].content)
        if total + size > max_total_bytes:
            break
        chosen.append(pool[idx])
        total += size
    if not chosen:
        raise NoMatchingSections(
            f"first drawn section exceeds the {max_total_bytes}-byte cap")
    logger.info("harvested %d sections, %d bytes", len(chosen), total)
    return PayloadCorpus(tuple(chosen))


def save(corpus: PayloadCorpus, path) -> Path:
    """Write ``manifest.json`` plus one blob per section into ``path``."""
    path = Path(path)
    (path / "blobs").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sec in enumerate(corpus.sections):
        blob = f"blobs/{i:04d}.bin"
        (path / blob).write_bytes(sec.content)
        entries.append({"source_name": sec.source_name.hex(),
                        "blob_file": blob, "size": len(sec.content),
                        "origin": sec.origin})
    (path / MANIFEST).write_text(json.dumps({"k": corpus.k, "sections": entries},
                                            indent=1) + "\n")
    return path


def load(path) -> PayloadCorpus:
    path = Path(path)
    try:
        doc = json.loads((path / MANIFEST).read_text())
        entries: Sequence[dict] = doc["sections"]
    except FileNotFoundError:
        raise CorruptManifest(f"no {MANIFEST} in {path}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptManifest(f"unreadable manifest in {path}: {exc}") from None
    if not entries:
        raise CorruptManifest("manifest lists no sections")
    sections = []
    for entry in entries:
        try:
            blob_path = path / entry["blob_file"]
            size = int(entry["size"])
            name = bytes.fromhex(entry["source_name"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptManifest(f"bad manifest entry {entry!r}: {exc}") from None
        if not blob_path.is_file():
            raise MissingBlob(str(blob_path))
        content = blob_path.read_bytes()
        if len(content) != size:
            raise SizeMismatch(
                f"{blob_path}: manifest says {size} bytes, blob has {len(content)}")
        if size == 0:
            raise CorruptManifest(f"{blob_path}: zero-length section")
        sections.append(CorpusSection(name, content, entry.get("origin", "")))
    return PayloadCorpus(tuple(sections))
