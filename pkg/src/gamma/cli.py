"""Command line entry point: ``gamma <command> ...``.

Set ``GAMMA_REMOTE_URL`` to attack a running ``gamma serve`` instance
instead of a local model file.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import corpus as corpus_mod
from .detector import (HardLabelDetector, SurrogateDetector, TrainingConfig,
                       choose_threshold, empirical_fpr, train_surrogate)
from .exceptions import GammaError
from .harness.campaign import baseline_curve, sweep
from .harness.fixtures import benign_profile, generate_fixtures, malware_profile
from .harness.report import write_report
from .manipulation import InjectionMode
from .optimizer import OptimizerConfig, run

logger = logging.getLogger("gamma")

REMOTE_ENV = "GAMMA_REMOTE_URL"


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v]


def _ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v]


def _programs(path) -> List[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    files = sorted(p for p in path.iterdir()
                   if p.is_file() and p.suffix.lower() in (".exe", ".dll", ".bin"))
    if not files:
        raise SystemExit(f"no programs found in {path}")
    return files


def _detector(args, label_mode: str):
    url = os.environ.get(REMOTE_ENV)
    if url:
        from .service import RemoteDetector
        logger.info("using remote detector at %s", url)
        return RemoteDetector(url, mode=label_mode)
    if not args.model:
        raise SystemExit(f"--model is required unless {REMOTE_ENV} is set")
    model = SurrogateDetector.load(args.model)
    return HardLabelDetector(model) if label_mode == "hard" else model


def _base_detector(args):
    """Detector with a real threshold, for baselines and rescoring."""
    url = os.environ.get(REMOTE_ENV)
    if url:
        from .service import RemoteDetector
        return RemoteDetector(url, mode="soft")
    if not args.model:
        raise SystemExit(f"--model is required unless {REMOTE_ENV} is set")
    return SurrogateDetector.load(args.model)


# -- commands ----------------------------------------------------------------

def cmd_gen_fixtures(args):
    make = benign_profile if args.profile == "benign" else malware_profile
    profile = make(args.seed) if args.seed is not None else make()
    paths = generate_fixtures(profile, args.count, args.out, prefix=args.prefix)
    print(f"wrote {len(paths)} {args.profile} fixtures to {args.out}")


def cmd_harvest(args):
    c = corpus_mod.harvest(args.benign, name_filter=args.name,
                           max_sections=args.max_sections,
                           max_total_bytes=args.max_bytes, seed=args.seed)
    corpus_mod.save(c, args.out)
    print(f"harvested {c.k} sections, {c.total_bytes} bytes, into {args.out}")


def cmd_train(args):
    benign = [p.read_bytes() for p in _programs(args.benign)]
    malware = [p.read_bytes() for p in _programs(args.malware)]
    model = train_surrogate(benign, malware, TrainingConfig(
        learning_rate=args.learning_rate, epochs=args.epochs, l2=args.l2,
        seed=args.seed))
    validation = ([p.read_bytes() for p in _programs(args.validation)]
                  if args.validation else benign)
    model.threshold = choose_threshold(model, validation, args.fpr)
    model.save(args.out)
    print(json.dumps({"training_accuracy": model.training_accuracy_,
                      "threshold": model.threshold,
                      "validation_fpr": empirical_fpr(model, validation,
                                                      model.threshold)}))


def cmd_attack(args):
    detector = _detector(args, args.label_mode)
    corpus = corpus_mod.load(args.corpus)
    config = OptimizerConfig(population_size=args.population,
                             query_budget=args.budget,
                             regularization=args.regularization,
                             seed=args.seed, mode=args.mode, n_jobs=args.jobs)
    result = run(Path(args.input).read_bytes(), detector, corpus, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "adv.bin").write_bytes(result.output_file)
    result.write_trace(out / "trace.jsonl", label_mode=args.label_mode,
                       sample=Path(args.input).stem, seed=args.seed)
    print(json.dumps({"evasive": result.evasive, "queries": result.queries_used,
                      "best_F": None if result.best_F == float("inf")
                      else result.best_F,
                      "injected_size": result.injected_size}))


def cmd_sweep(args):
    detector = _base_detector(args)
    corpus = corpus_mod.load(args.corpus)
    campaign = sweep(_programs(args.inputs), args.lambdas, args.budgets,
                     args.modes, detector, corpus, args.out, seeds=args.seeds,
                     label_mode=args.label_mode,
                     population_size=args.population,
                     baseline=not args.no_baseline, n_jobs=args.jobs)
    print(f"{len(campaign.runs)} runs, {len(campaign.failures)} failed; "
          f"traces under {args.out}")


def cmd_baseline(args):
    detector = _base_detector(args)
    inputs = [p.read_bytes() for p in _programs(args.inputs)]
    curve = baseline_curve(inputs, args.lengths, detector, seed=args.seed)
    text = "".join(json.dumps(row, sort_keys=True) + "\n" for row in curve)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_report(args):
    paths = write_report(args.campaign, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")


def cmd_serve(args):
    from .service import serve
    model = SurrogateDetector.load(args.model)
    service = serve(model, args.bind, mode=args.mode, start=False)
    print(f"serving {args.mode}-label scores on {service.url}", flush=True)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.httpd.server_close()


# -- parser ------------------------------------------------------------------

def _attack_options(p, many=False):
    p.add_argument("--corpus", required=True, help="harvested corpus directory")
    p.add_argument("--model", help="surrogate model JSON")
    p.add_argument("--label-mode", choices=("soft", "hard"), default="soft")
    p.add_argument("--population", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1,
                   help="threads scoring one generation")
    modes = [m.value for m in InjectionMode]
    if many:
        p.add_argument("--lambdas", type=_floats, default=[1e-3, 1e-6, 1e-9])
        p.add_argument("--budgets", type=_ints, default=[30, 500])
        p.add_argument("--modes", type=lambda t: t.split(","), default=modes)
        p.add_argument("--seeds", type=_ints, default=[0])
    else:
        p.add_argument("--lambda", dest="regularization", type=float,
                       default=1e-6)
        p.add_argument("--budget", type=int, default=510)
        p.add_argument("--mode", choices=modes,
                       default=InjectionMode.SECTION_INJECTION.value)
        p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gamma", description="Genetic black-box evasion of static PE "
        "malware detectors by benign content injection.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixtures", help="write synthetic PE fixtures")
    p.add_argument("--profile", choices=("benign", "malware"), required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int)
    p.add_argument("--prefix")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("harvest", help="collect benign sections into a corpus")
    p.add_argument("--benign", required=True)
    p.add_argument("--name", default=corpus_mod.DEFAULT_NAME)
    p.add_argument("--max-sections", type=int, default=corpus_mod.DEFAULT_MAX_SECTIONS)
    p.add_argument("--max-bytes", type=int, default=corpus_mod.DEFAULT_MAX_BYTES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_harvest)

    p = sub.add_parser("train", help="fit the surrogate detector")
    p.add_argument("--benign", required=True)
    p.add_argument("--malware", required=True)
    p.add_argument("--validation", help="benign set for the threshold "
                   "(defaults to the training benign set)")
    p.add_argument("--fpr", type=float, default=0.05)
    p.add_argument("--l2", type=float, default=3.0)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack one program")
    p.add_argument("--input", required=True)
    _attack_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="run a lambda x budget x mode campaign")
    p.add_argument("--inputs", required=True, help="directory of programs")
    _attack_options(p, many=True)
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", help="random padding detection curve")
    p.add_argument("--inputs", required=True)
    p.add_argument("--model")
    p.add_argument("--lengths", type=_ints,
                   default=[10_000, 100_000, 250_000, 500_000, 1_000_000])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="aggregate a campaign into CSV and SVG")
    p.add_argument("campaign")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="expose a model over HTTP")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("soft", "hard"), default="soft")
    p.add_argument("--bind", default="127.0.0.1:8080")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except GammaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
