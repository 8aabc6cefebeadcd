import json

import pytest

from gamma.cli import build_parser, main
from gamma.detector import SurrogateDetector
from gamma.service import serve


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-fixtures", "--profile", "benign", "--count", "30",
                 "--out", str(root / "benign")]) == 0
    assert main(["gen-fixtures", "--profile", "malware", "--count", "30",
                 "--out", str(root / "malware")]) == 0
    assert main(["gen-fixtures", "--profile", "malware", "--count", "2", "--seed", "5",
                 "--prefix", "target", "--out", str(root / "targets")]) == 0
    assert main(["harvest", "--benign", str(root / "benign"), "--max-sections", "10",
                 "--out", str(root / "corpus")]) == 0
    assert main(["train", "--benign", str(root / "benign"), "--malware",
                 str(root / "malware"), "--out", str(root / "m.json")]) == 0
    return root


def test_train_output(workspace, capsys):
    model = SurrogateDetector.load(workspace / "m.json")
    assert model.training_accuracy_ >= 0.95
    assert 0.0 < model.threshold < 1.0


def test_attack(workspace, capsys):
    out = workspace / "atk"
    assert main(["attack", "--input", str(workspace / "targets" / "target-0000.exe"),
                 "--corpus", str(workspace / "corpus"), "--model",
                 str(workspace / "m.json"), "--budget", "30", "--lambda", "1e-6",
                 "--mode", "padding", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["queries"] <= 30
    assert (out / "adv.bin").exists() and (out / "trace.jsonl").exists()


def test_sweep_report_baseline(workspace, capsys):
    camp = workspace / "camp"
    assert main(["sweep", "--inputs", str(workspace / "targets"), "--corpus",
                 str(workspace / "corpus"), "--model", str(workspace / "m.json"),
                 "--lambdas", "1e-3,1e-9", "--budgets", "20", "--modes", "padding",
                 "--out", str(camp)]) == 0
    assert main(["report", str(camp)]) == 0
    assert (camp / "report.csv").read_text().startswith("lambda,budget,mode")
    capsys.readouterr()
    assert main(["baseline", "--inputs", str(workspace / "targets"), "--model",
                 str(workspace / "m.json"), "--lengths", "0,1000"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [r["payload_length"] for r in rows] == [0, 1000]


def test_remote_env(workspace, monkeypatch, capsys):
    model = SurrogateDetector.load(workspace / "m.json")
    with serve(model, mode="hard") as svc:
        monkeypatch.setenv("GAMMA_REMOTE_URL", svc.url)
        assert main(["attack", "--input", str(workspace / "targets" / "target-0001.exe"),
                     "--corpus", str(workspace / "corpus"), "--budget", "20",
                     "--label-mode", "hard", "--out", str(workspace / "remote")]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert svc.queries == summary["queries"]


def test_errors(workspace, capsys):
    assert main(["attack", "--input", str(workspace / "m.json"), "--corpus",
                 str(workspace / "corpus"), "--model", str(workspace / "m.json"),
                 "--out", str(workspace / "bad")]) == 1
    assert "InputNotParseable" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        build_parser().parse_args(["attack"])
    with pytest.raises(SystemExit):
        main(["attack", "--input", "x", "--corpus", str(workspace / "corpus"),
              "--out", "y"])
