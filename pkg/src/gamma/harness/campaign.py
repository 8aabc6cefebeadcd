"""Attack campaigns over a grid of (lambda, budget, mode, seed) cells.

Every run persists under
``<out>/<mode>/<lambda>/<budget>/<sample>/{trace.jsonl, adv.bin}`` so a
campaign can be re-scored or re-reported without re-running anything.
Random-payload baselines matched to each run's injected size go to
``<out>/baseline/<mode>/<lambda>/<budget>/<sample>.json``.
"""
from __future__ import annotations

import json
import logging
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ..corpus import PayloadCorpus
from ..detector import Detector, HardLabelDetector, label
from ..exceptions import GammaError
from ..manipulation import InjectionMode
from ..optimizer import OptimizerConfig, run
from ..pe import PeFile, parse, serialize

logger = logging.getLogger(__name__)

FAILURES_FILE = "failures.jsonl"


def lambda_dirname(lam: float) -> str:
    return f"{lam:g}"


def sample_dirname(name: str, seed: int, n_seeds: int) -> str:
    return name if n_seeds == 1 else f"{name}-s{seed}"


def random_baseline(x, payload_length: int, seed: int, detector: Detector):
    """Score ``x`` padded with ``payload_length`` uniformly random bytes.

    Returns
    -------
    score : float
    injected_size : int
        Always equal to ``payload_length``.
    """
    if payload_length < 0:
        raise ValueError("payload_length must be non-negative")
    pe = x if isinstance(x, PeFile) else parse(x)
    out = pe.copy()
    rng = np.random.default_rng(seed)
    out.overlay = pe.overlay + rng.integers(0, 256, payload_length,
                                            dtype=np.uint8).tobytes()
    data = serialize(out)
    return float(detector.query(data)), len(data) - len(serialize(pe))


def baseline_curve(inputs: Sequence[bytes], lengths: Iterable[int],
                   detector: Detector, seed: int = 0) -> List[dict]:
    """Detection rate of random padding at each payload length."""
    out = []
    for n in lengths:
        flagged = [random_baseline(x, int(n), seed + i, detector)[0]
                   >= detector.threshold for i, x in enumerate(inputs)]
        out.append({"payload_length": int(n),
                    "detection_rate": float(np.mean(flagged))})
    return out


@dataclass
class RunRecord:
    mode: str
    label_mode: str
    regularization: float
    budget: int
    sample: str
    seed: int
    path: Optional[Path] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class Campaign:
    root: Path
    runs: List[RunRecord] = field(default_factory=list)

    @property
    def failures(self) -> List[RunRecord]:
        return [r for r in self.runs if r.failed]

    def report(self):
        from .report import load_campaign
        return load_campaign(self.root)


def _load_input(item):
    if isinstance(item, (str, Path)):
        path = Path(item)
        return path.stem, path.read_bytes()
    name, data = item
    return str(name), bytes(data)


def sweep(inputs, lambdas: Sequence[float], budgets: Sequence[int],
          modes: Sequence, detector: Detector, corpus: PayloadCorpus, out_dir,
          seeds: Sequence[int] = (0,), label_mode: str = "soft",
          population_size: int = 10, baseline: bool = True,
          n_jobs: int = 1) -> Campaign:
    """Run every (input, lambda, budget, mode, seed) cell and persist it.

    Parameters
    ----------
    inputs : sequence of paths or (name, bytes) pairs
    lambdas, budgets, modes, seeds : sequences
        The grid; modes are :class:`InjectionMode` values.
    detector : Detector
        Scored target. With ``label_mode="hard"`` it is wrapped in
        :class:`HardLabelDetector` unless it already answers labels only.
    out_dir : path
        Campaign root.
    baseline : bool
        Also score a random padding of the same on-disk size per run.

    Returns
    -------
    Campaign
        Per-run records; failed runs carry the error and are also logged
        to ``failures.jsonl``. A failure never aborts the sweep.
    """
    items = [_load_input(i) for i in inputs]
    if not items:
        raise ValueError("no inputs")
    if label_mode not in ("soft", "hard"):
        raise ValueError("label_mode must be 'soft' or 'hard'")
    target = detector
    if label_mode == "hard" and not (isinstance(detector, HardLabelDetector)
                                     or getattr(detector, "mode", None) == "hard"):
        target = HardLabelDetector(detector)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    campaign = Campaign(root)
    failures = open(root / FAILURES_FILE, "a")
    try:
        for mode in map(InjectionMode, modes):
            for lam in lambdas:
                for T in budgets:
                    for name, data in items:
                        for seed in seeds:
                            rec = _run_cell(name, data, mode, lam, T, seed,
                                            len(seeds), target, detector,
                                            corpus, root, label_mode,
                                            population_size, baseline, n_jobs)
                            campaign.runs.append(rec)
                            if rec.failed:
                                failures.write(json.dumps({
                                    "mode": rec.mode, "lambda": lam, "budget": T,
                                    "sample": name, "seed": seed,
                                    "error": rec.error}, sort_keys=True) + "\n")
    finally:
        failures.close()
    logger.info("campaign %s: %d runs, %d failed", root, len(campaign.runs),
                len(campaign.failures))
    return campaign


def _run_cell(name, data, mode, lam, T, seed, n_seeds, target, detector, corpus,
              root, label_mode, N, baseline, n_jobs) -> RunRecord:
    rec = RunRecord(str(mode), label_mode, lam, T, name, seed)
    cell = (root / str(mode) / lambda_dirname(lam) / str(T)
            / sample_dirname(name, seed, n_seeds))
    config = OptimizerConfig(population_size=N, query_budget=T,
                             regularization=lam, seed=seed, mode=mode,
                             n_jobs=n_jobs)
    t0 = time.perf_counter()
    try:
        result = run(data, target, corpus, config)
    except GammaError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        logger.warning("run %s failed: %s", cell, rec.error)
        logger.debug("%s", traceback.format_exc())
        return rec
    cell.mkdir(parents=True, exist_ok=True)
    (cell / "adv.bin").write_bytes(result.output_file)
    result.write_trace(cell / "trace.jsonl", label_mode=label_mode,
                       sample=name, seed=seed, threshold=_finite(
                           getattr(detector, "threshold", None)))
    rec.path = cell
    logger.info("%s: q=%d evasive=%s size=%d (%.1fs)", cell,
                result.queries_used, result.evasive, result.injected_size,
                time.perf_counter() - t0)
    if baseline:
        score, size = random_baseline(data, result.injected_size, seed, detector)
        bdir = root / "baseline" / str(mode) / lambda_dirname(lam) / str(T)
        bdir.mkdir(parents=True, exist_ok=True)
        doc = {"sample": name, "seed": seed, "injected_size": size,
               "score": score,
               "detected": bool(score >= detector.threshold)}
        (bdir / f"{sample_dirname(name, seed, n_seeds)}.json").write_text(
            json.dumps(doc, sort_keys=True) + "\n")
    return rec


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if np.isfinite(v) else None


def rescore(campaign_dir, detector: Detector) -> List[dict]:
    """Re-parse and re-score every persisted adversarial program."""
    out = []
    for adv in sorted(Path(campaign_dir).glob("*/*/*/*/adv.bin")):
        data = adv.read_bytes()
        parse(data)
        out.append({"path": str(adv.parent), "score": detector.query(data),
                    "label": label(detector, data)})
    return out
