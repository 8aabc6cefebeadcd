import warnings
from pathlib import Path

import numpy as np
import pytest

from gamma.corpus import harvest
from gamma.detector import SurrogateDetector, choose_threshold
from gamma.harness.fixtures import benign_profile, generate_fixtures, malware_profile

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("fixtures")


@pytest.fixture(scope="session")
def benign_paths(fixture_root):
    return generate_fixtures(benign_profile(7), 200, fixture_root / "benign")


@pytest.fixture(scope="session")
def malware_paths(fixture_root):
    # attack targets; disjoint from the training malware below
    return generate_fixtures(malware_profile(11), 50, fixture_root / "malware")


@pytest.fixture(scope="session")
def training_malware(fixture_root):
    paths = generate_fixtures(malware_profile(12), 50, fixture_root / "malware-train",
                              prefix="mt")
    return [p.read_bytes() for p in paths]


@pytest.fixture(scope="session")
def validation_benign(fixture_root):
    paths = generate_fixtures(benign_profile(99), 100, fixture_root / "validation",
                              prefix="val")
    return [p.read_bytes() for p in paths]


@pytest.fixture(scope="session")
def benign_bytes(benign_paths):
    return [p.read_bytes() for p in benign_paths]


@pytest.fixture(scope="session")
def malware_bytes(malware_paths):
    return [p.read_bytes() for p in malware_paths]


@pytest.fixture(scope="session")
def surrogate(benign_bytes, training_malware, validation_benign):
    model = SurrogateDetector().fit(benign_bytes[:50] + training_malware,
                                    [0] * 50 + [1] * len(training_malware))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        model.threshold = choose_threshold(model, validation_benign, 0.05)
    return model


@pytest.fixture(scope="session")
def corpus(benign_paths, fixture_root):
    return harvest(fixture_root / "benign", seed=0)


@pytest.fixture(scope="session")
def small_corpus(benign_paths, fixture_root):
    """A few sections only, for tests that run many attacks."""
    return harvest(fixture_root / "benign", max_sections=12,
                   max_total_bytes=96 * 1024, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
