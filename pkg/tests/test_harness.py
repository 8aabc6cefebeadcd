import csv
import io
import re

import numpy as np
import pytest

from gamma.exceptions import EmptyCampaign
from gamma.harness.campaign import (baseline_curve, random_baseline, rescore,
                                    sweep)
from gamma.harness.fixtures import (FixtureProfile, SectionPlan, benign_profile,
                                    generate_fixtures, generate_one,
                                    malware_profile)
from gamma.harness.report import (CSV_COLUMNS, least_squares, load_campaign,
                                  write_report)
from gamma.optimizer import read_trace
from gamma.pe import parse, validate


def test_fixtures_valid_and_deterministic(tmp_path):
    a = generate_fixtures(benign_profile(7), 50, tmp_path / "a")
    b = generate_fixtures(benign_profile(7), 50, tmp_path / "b")
    assert len(a) == 50
    for pa, pb in zip(a, b):
        data = pa.read_bytes()
        assert data == pb.read_bytes()
        assert validate(parse(data)) == []
    assert (tmp_path / "a" / "manifest.json").exists()
    assert generate_one(malware_profile(3), 0) != generate_one(malware_profile(4), 0)


def test_profile_validation():
    with pytest.raises(ValueError):
        FixtureProfile("benign", np.full(256, 0.5), (SectionPlan(".text", 10, 0),), 0)
    with pytest.raises(ValueError):
        FixtureProfile("benign", np.ones(10) / 10, (SectionPlan(".text", 10, 0),), 0)


def test_random_baseline(surrogate, malware_bytes):
    x = malware_bytes[0]
    score, size = random_baseline(x, 0, 0, surrogate)
    assert score == surrogate.query(x) and size == 0
    score, size = random_baseline(x, 12345, 1, surrogate)
    assert size == 12345
    assert random_baseline(x, 12345, 1, surrogate)[0] == score
    curve = baseline_curve(malware_bytes[:3], [0, 50_000], surrogate)
    assert [c["payload_length"] for c in curve] == [0, 50_000]
    assert all(0.0 <= c["detection_rate"] <= 1.0 for c in curve)


@pytest.fixture(scope="module")
def small_campaign(tmp_path_factory, surrogate, small_corpus, malware_paths):
    root = tmp_path_factory.mktemp("campaign")
    inputs = list(malware_paths[:3]) + [("broken", b"MZ not really a program")]
    camp = sweep(inputs, [1e-3, 1e-9], [20, 40], ["padding", "section-injection"],
                 surrogate, small_corpus, root, seeds=[0])
    return camp


def test_sweep_layout_and_failures(small_campaign):
    root = small_campaign.root
    assert len(small_campaign.runs) == 4 * 2 * 2 * 2
    assert len(small_campaign.failures) == 8  # the broken input, every cell
    traces = sorted(root.glob("*/*/*/*/trace.jsonl"))
    assert len(traces) == 3 * 2 * 2 * 2
    assert (root / "section-injection" / "1e-09" / "40" / "malware-0000" / "adv.bin").exists()
    lines = (root / "failures.jsonl").read_text().splitlines()
    assert len(lines) == 8 and all("InputNotParseable" in line for line in lines)


def test_persisted_outputs_rescore(small_campaign, surrogate):
    for row in rescore(small_campaign.root, surrogate):
        final = read_trace(f"{row['path']}/trace.jsonl")[-1]
        data = open(f"{row['path']}/adv.bin", "rb").read()
        assert validate(parse(data)) == []
        assert row["score"] == final["best_score"]
        assert bool(row["label"]) == (not final["evasive"])


def test_report_csv_and_plots(small_campaign, tmp_path):
    paths = write_report(small_campaign.root, tmp_path / "r1")
    text = paths["csv"].read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 2 * 2 * 2
    for r in rows:
        assert 0.0 <= float(r["detection_rate"]) <= 1.0
        assert r["label_mode"] == "soft"
    # detection rate recomputed straight from the traces
    rep = load_campaign(small_campaign.root)
    cell = rep.cell(1e-9, 40, "padding")
    finals = [read_trace(p)[-1] for p in
              (small_campaign.root / "padding" / "1e-09" / "40").glob("*/trace.jsonl")]
    assert cell.detection_rate == np.mean([not f["evasive"] for f in finals])
    assert cell.n_runs == 3

    svg = paths["detection:padding-soft"].read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    labels = re.findall(r'data-label="([^"]+)"', svg)
    assert labels == ["lambda=0.001", "lambda=1e-09", "random"]
    # determinism: same traces, same bytes
    again = write_report(small_campaign.root, tmp_path / "r2")
    for key, path in paths.items():
        assert again[key].read_bytes() == path.read_bytes()


def test_empty_campaign(tmp_path):
    with pytest.raises(EmptyCampaign):
        load_campaign(tmp_path)


def test_least_squares():
    slope, icpt = least_squares([0, 1, 2, 3], [1, 3, 5, 7])
    assert slope == pytest.approx(2) and icpt == pytest.approx(1)
    assert least_squares([5, 5], [1, 3]) == (0.0, 2.0)
