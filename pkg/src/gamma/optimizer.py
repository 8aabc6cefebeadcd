"""Genetic black-box optimization of a manipulation vector.

Minimizes ``F(s) = f(x + s) + lambda * c^T s`` over ``s`` in ``[0, 1]^k``
with at most ``T`` detector queries. Each generation scores ``N`` fresh
candidates, keeps the best ``N`` of old and new (so the best objective
never gets worse), then breeds the next candidates by one-point crossover
and per-element resampling. Fitness of survivors is cached, never re-queried.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import PayloadCorpus
from .detector import Detector, HardLabelDetector
from .exceptions import (AllCandidatesFailed, CandidateEvaluationFailed,
                         GammaError, InputNotParseable)
from .manipulation import InjectionMode, apply, payload_lengths, penalty
from .pe import PeFile, parse, serialize, validate
from .utils.validation import check_scalar

logger = logging.getLogger(__name__)

INF = math.inf


@dataclass(frozen=True)
class OptimizerConfig:
    population_size: int = 10
    query_budget: int = 510
    regularization: float = 1e-6
    mutation_rate: float = 0.1
    stagnation_generations: int = 5
    stagnation_epsilon: float = 1e-6
    seed: int = 0
    mode: InjectionMode = InjectionMode.SECTION_INJECTION
    n_jobs: int = 1

    def __post_init__(self):
        check_scalar(self.population_size, "population_size", lo=2, integral=True)
        check_scalar(self.query_budget, "query_budget", lo=self.population_size,
                     integral=True)
        check_scalar(self.regularization, "regularization", lo=0.0)
        check_scalar(self.mutation_rate, "mutation_rate", lo=0.0, hi=1.0,
                     lo_open=True, hi_open=True)
        check_scalar(self.stagnation_generations, "stagnation_generations",
                     lo=1, integral=True)
        check_scalar(self.stagnation_epsilon, "stagnation_epsilon", lo=0.0)
        check_scalar(self.n_jobs, "n_jobs", lo=1, integral=True)
        object.__setattr__(self, "mode", InjectionMode(self.mode))


@dataclass(frozen=True)
class Evaluation:
    """Outcome of one query: objective, raw score, penalty, on-disk growth."""
    objective: float
    score: float
    penalty: float
    injected_size: int
    failed: bool = False


@dataclass
class Population:
    candidates: np.ndarray
    evaluations: List[Evaluation] = field(default_factory=list)

    @property
    def fitness(self) -> np.ndarray:
        return np.array([e.objective for e in self.evaluations])

    def __len__(self):
        return len(self.candidates)


@dataclass
class AttackResult:
    best_s: np.ndarray
    best_F: float
    best_score: float
    best_penalty: float
    injected_size: int
    evasive: bool
    queries_used: int
    history: List[dict]
    output_file: bytes
    seconds_per_query: float = 0.0
    config: Optional[OptimizerConfig] = None

    def trace_records(self, **extra) -> List[dict]:
        """Per-generation JSON records plus a final summary record.

        Keyword arguments are added to the final record.
        """
        final = dict(extra)
        final.update({
            "final": True, "q": self.queries_used,
            "best_F": _json_float(self.best_F),
            "best_score": _json_float(self.best_score),
            "best_penalty": self.best_penalty,
            "injected_size": self.injected_size, "evasive": self.evasive,
            "seconds_per_query": self.seconds_per_query,
            "s_star": self.best_s.tolist(),
        })
        if self.config is not None:
            cfg = asdict(self.config)
            cfg["mode"] = str(self.config.mode)
            final["config"] = cfg
        return [dict(r, best_F=_json_float(r["best_F"]),
                     best_score=_json_float(r["best_score"]))
                for r in self.history] + [final]

    def write_trace(self, path, **extra) -> None:
        with open(path, "w") as fh:
            for rec in self.trace_records(**extra):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _json_float(v):
    return None if v is None or math.isinf(v) else v


def read_trace(path) -> List[dict]:
    """Inverse of :meth:`AttackResult.write_trace`; ``None`` scores become inf."""
    out = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            for key in ("best_F", "best_score"):
                if key in rec and rec[key] is None:
                    rec[key] = INF
            out.append(rec)
    return out


# -- genetic operators -------------------------------------------------------

def init_population(N: int, k: int, rng: np.random.Generator) -> Population:
    """``N`` candidates drawn i.i.d. uniform on ``[0, 1]^k``."""
    return Population(rng.random((N, k)))


def _sort_key(i, ev: Evaluation, prefer_large_on_inf: bool):
    if math.isinf(ev.objective):
        pen = -ev.penalty if prefer_large_on_inf else ev.penalty
        return (1, 0.0, pen, i)
    return (0, ev.objective, ev.penalty, i)


def selection(candidates: np.ndarray, evaluations: Sequence[Evaluation], N: int,
              prefer_large_on_inf: bool = False) -> Population:
    """Keep the ``N`` candidates with the lowest objective.

    Ties go to the lower penalty, then the lower index. Candidates scored
    inf are ordered by *larger* penalty when ``prefer_large_on_inf`` (the
    hard-label rule: more injected content is likelier to flip the label).
    """
    order = sorted(range(len(evaluations)),
                   key=lambda i: _sort_key(i, evaluations[i], prefer_large_on_inf))
    keep = order[:N]
    return Population(candidates[keep], [evaluations[i] for i in keep])


def crossover(parents: Population, rng: np.random.Generator) -> np.ndarray:
    """One-point crossover of uniformly drawn parent pairs.

    Child = ``a[:j] ++ b[j:]`` with ``j`` uniform in ``{1..k}``.
    """
    P = parents.candidates
    N, k = P.shape
    if N < 2:
        raise ValueError("crossover needs at least two parents")
    children = np.empty_like(P)
    for c in range(N):
        a, b = rng.choice(N, size=2, replace=False)
        j = int(rng.integers(1, k + 1))
        children[c, :j] = P[a, :j]
        children[c, j:] = P[b, j:]
    return children


def mutate(candidates: np.ndarray, mutation_rate: float,
           rng: np.random.Generator) -> np.ndarray:
    """Resample each element uniformly on [0, 1] with ``mutation_rate``."""
    mask = rng.random(candidates.shape) < mutation_rate
    fresh = rng.random(candidates.shape)
    return np.where(mask, fresh, candidates)


# -- objective ---------------------------------------------------------------

def evaluate(x: PeFile, s, detector: Detector, corpus: PayloadCorpus,
             mode, regularization: float, base_size: int = None) -> Evaluation:
    """Score one candidate. Failures yield an inf objective, flagged."""
    pen = penalty(s, corpus)
    if base_size is None:
        base_size = len(serialize(x))
    try:
        data = serialize(apply(x, s, corpus, mode))
        score = float(detector.query(data))
    except GammaError as exc:
        logger.debug("candidate failed: %s", exc)
        return Evaluation(INF, INF, pen, 0, failed=True)
    objective = INF if math.isinf(score) else score + regularization * pen
    return Evaluation(objective, score, pen, len(data) - base_size)


def objective(x: PeFile, s, detector: Detector, corpus: PayloadCorpus, mode,
              regularization: float) -> float:
    """``f(x + s) + lambda * c^T s``; inf whenever the detector says inf."""
    ev = evaluate(x, s, detector, corpus, mode, regularization)
    if ev.failed:
        raise CandidateEvaluationFailed("candidate could not be evaluated")
    return ev.objective


def _improved(prev: float, cur: float, eps: float) -> bool:
    # relative, so that scaling F by a positive constant (the hard-label
    # objective is lambda * penalty) does not change when the run halts
    if math.isinf(prev):
        return not math.isinf(cur)
    return prev - cur > eps * abs(prev)


def _is_hard_label(detector) -> bool:
    return isinstance(detector, HardLabelDetector) or \
        getattr(detector, "mode", None) == "hard"


def run(x, detector: Detector, corpus: PayloadCorpus,
        config: OptimizerConfig = OptimizerConfig()) -> AttackResult:
    """Run the genetic attack on program ``x`` (bytes or :class:`PeFile`)."""
    if not isinstance(x, PeFile):
        try:
            x = parse(x)
        except GammaError as exc:
            raise InputNotParseable(str(exc)) from exc
    problems = validate(x)
    if problems:
        raise InputNotParseable(f"input fails validation: {problems}")

    N, T, lam = config.population_size, config.query_budget, config.regularization
    k = corpus.k
    hard = _is_hard_label(detector)
    rng = np.random.default_rng(config.seed)
    base_size = len(serialize(x))
    elapsed = [0.0]

    def score_all(cands: np.ndarray) -> List[Evaluation]:
        def one(s):
            return evaluate(x, s, detector, corpus, config.mode, lam, base_size)
        t0 = time.perf_counter()
        if config.n_jobs > 1:
            with ThreadPoolExecutor(config.n_jobs) as pool:
                evs = list(pool.map(one, cands))
        else:
            evs = [one(s) for s in cands]
        elapsed[0] += time.perf_counter() - t0
        if all(e.failed for e in evs):
            raise AllCandidatesFailed(
                f"all {len(evs)} candidates of a generation failed")
        return evs

    survivors = Population(np.empty((0, k)), [])
    fresh = init_population(N, k, rng).candidates
    fresh_evals = score_all(fresh)
    q = N
    history: List[dict] = []
    stagnant, prev_best = 0, None
    generation = 0
    while True:
        union = np.vstack([survivors.candidates, fresh])
        survivors = selection(union, survivors.evaluations + fresh_evals, N,
                              prefer_large_on_inf=hard)
        best = survivors.evaluations[0]
        evasive_pens = [e.penalty for e in survivors.evaluations
                        if not e.failed and e.score < detector.threshold]
        history.append({
            "generation": generation, "q": q, "best_F": best.objective,
            "best_score": best.score, "best_penalty": best.penalty,
            "injected_size": best.injected_size,
            "n_payloads": int(np.count_nonzero(
                payload_lengths(survivors.candidates[0], corpus))),
            "evasive": bool(not best.failed and best.score < detector.threshold),
            "min_evasive_penalty": min(evasive_pens) if evasive_pens else None,
        })
        if prev_best is not None:
            stagnant = 0 if _improved(prev_best, best.objective,
                                      config.stagnation_epsilon) else stagnant + 1
        prev_best = best.objective
        if stagnant >= config.stagnation_generations or q + N > T:
            break
        fresh = mutate(crossover(survivors, rng), config.mutation_rate, rng)
        fresh_evals = score_all(fresh)
        q += N
        generation += 1

    best = survivors.evaluations[0]
    best_s = survivors.candidates[0].copy()
    x_star = serialize(apply(x, best_s, corpus, config.mode))
    return AttackResult(
        best_s=best_s, best_F=best.objective, best_score=best.score,
        best_penalty=best.penalty, injected_size=len(x_star) - base_size,
        evasive=history[-1]["evasive"], queries_used=q, history=history,
        output_file=x_star, seconds_per_query=elapsed[0] / q, config=config)


class GammaAttack(BaseEstimator):
    """Estimator-style front end to :func:`run`.

    Parameters
    ----------
    detector : Detector
        Black box to evade; wrap it in :class:`HardLabelDetector` for the
        label-only setting.
    corpus : PayloadCorpus
        Benign sections defining the search space.
    population_size, query_budget : int
        ``N`` and ``T``; ``T`` is never exceeded.
    regularization : float
        Weight of the size penalty (lambda).
    mode : {"padding", "section-injection"}
    mutation_rate : float
        Per-element resampling probability.
    stagnation_generations, stagnation_epsilon
        Halt after this many generations whose best objective improved by
        no more than ``epsilon`` relative.
    random_state : int
    n_jobs : int
        Threads used to score the candidates of one generation.

    Attributes
    ----------
    result_ : AttackResult
    best_s_ : ndarray of shape (k,)
    adversarial_ : bytes
        The manipulated program for the best vector.
    """

    def __init__(self, detector=None, corpus=None, population_size=10,
                 query_budget=510, regularization=1e-6,
                 mode="section-injection", mutation_rate=0.1,
                 stagnation_generations=5, stagnation_epsilon=1e-6,
                 random_state=0, n_jobs=1):
        self.detector = detector
        self.corpus = corpus
        self.population_size = population_size
        self.query_budget = query_budget
        self.regularization = regularization
        self.mode = mode
        self.mutation_rate = mutation_rate
        self.stagnation_generations = stagnation_generations
        self.stagnation_epsilon = stagnation_epsilon
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self) -> OptimizerConfig:
        return OptimizerConfig(
            population_size=self.population_size, query_budget=self.query_budget,
            regularization=self.regularization, mutation_rate=self.mutation_rate,
            stagnation_generations=self.stagnation_generations,
            stagnation_epsilon=self.stagnation_epsilon, seed=self.random_state,
            mode=self.mode, n_jobs=self.n_jobs)

    def fit(self, x, y=None):
        if self.detector is None or self.corpus is None:
            raise ValueError("GammaAttack needs a detector and a corpus")
        self.result_ = run(x, self.detector, self.corpus, self._config())
        self.best_s_ = self.result_.best_s
        self.adversarial_ = self.result_.output_file
        return self

    def transform(self, X) -> List[bytes]:
        """Attack every program in ``X``; results land in ``results_``."""
        self.results_ = [run(x, self.detector, self.corpus, self._config())
                         for x in X]
        return [r.output_file for r in self.results_]
