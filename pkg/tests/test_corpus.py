import json

import pytest

from gamma.corpus import CorpusSection, PayloadCorpus, harvest, load, save
from gamma.exceptions import (CorruptManifest, EmptyDirectory, MissingBlob,
                              NoMatchingSections, SizeMismatch)
from gamma.harness.fixtures import minimal_pe


@pytest.fixture
def pe_dir(tmp_path):
    d = tmp_path / "benign"
    d.mkdir()
    for i in range(6):
        (d / f"b{i}.exe").write_bytes(minimal_pe(3, 0x200 + 0x80 * i, seed=i))
    (d / "junk.txt").write_bytes(b"not a program")
    return d


def test_harvest_filters_by_name(pe_dir):
    c = harvest(pe_dir)
    assert c.k == 6
    assert all(s.source_name.rstrip(b"\0") == b".rdata" for s in c.sections)
    # content is the raw section data, alignment padding included
    assert sorted(c.sizes) == sorted(0x200 * ((0x200 + 0x80 * i + 0x1FF) // 0x200)
                                     for i in range(6))


def test_harvest_deterministic(pe_dir):
    a, b = harvest(pe_dir, seed=3), harvest(pe_dir, seed=3)
    assert a == b
    assert [s.origin for s in harvest(pe_dir, seed=4).sections] != \
        [s.origin for s in a.sections] or a.k == 1


def test_harvest_caps(pe_dir):
    assert harvest(pe_dir, max_sections=2).k == 2
    c = harvest(pe_dir, max_total_bytes=0x800)
    assert c.total_bytes <= 0x800


def test_harvest_errors(tmp_path, pe_dir):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(EmptyDirectory):
        harvest(empty)
    with pytest.raises(EmptyDirectory):
        harvest(tmp_path / "missing")
    with pytest.raises(NoMatchingSections):
        harvest(pe_dir, name_filter=".nothere")
    with pytest.raises(NoMatchingSections):
        harvest(pe_dir, max_total_bytes=10)


def test_save_load_round_trip(tmp_path, pe_dir):
    c = harvest(pe_dir)
    save(c, tmp_path / "corpus")
    assert load(tmp_path / "corpus") == c


def test_load_errors(tmp_path, pe_dir):
    root = tmp_path / "corpus"
    save(harvest(pe_dir), root)
    manifest = json.loads((root / "manifest.json").read_text())

    blob = root / manifest["sections"][0]["blob_file"]
    blob.write_bytes(blob.read_bytes()[:-1])
    with pytest.raises(SizeMismatch):
        load(root)
    blob.unlink()
    with pytest.raises(MissingBlob):
        load(root)
    (root / "manifest.json").write_text("{not json")
    with pytest.raises(CorruptManifest):
        load(root)
    (root / "manifest.json").write_text(json.dumps({"k": 5, "sections": []}))
    with pytest.raises(CorruptManifest):
        load(root)


def test_payload_corpus_validation():
    with pytest.raises(ValueError):
        PayloadCorpus(())
    with pytest.raises(ValueError):
        PayloadCorpus((CorpusSection(b".rdata", b""),))
    c = PayloadCorpus(((b".rdata", b"abc", "x"), (b".rdata", b"defg", "y")))
    assert c.k == 2 and list(c.sizes) == [3, 4] and c.total_bytes == 7
