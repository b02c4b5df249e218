"""Out-of-sample bootstrap harness with balanced and realistic validation.

Each repetition draws a training set (with replacement), trains a classifier
and scores it twice:

* balanced: a test set with the training set's per-kind composition, drawn
  without replacement from instances whose origin is not in the training set;
* realistic: every in-threshold line of ``n_files`` files that contain at
  least one violation of the rule and none of the training origins.

Seeds: repetition ``i`` of ``(rule, config)`` under master seed ``m`` uses
the first 8 bytes (little-endian, top bit cleared) of
``blake2b("m|rule|size|ratio|i")``. One ``random.Random`` seeded with it
draws the training set, then the balanced test, then the realistic files;
the backend is trained with the same seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from mlinter.classifier import Backend
from mlinter.corpus import CorpusView, ViolationIndex
from mlinter.dataset import VIOLATION, Example, ExamplePool, LearningConfig, TrainingSet, sample_training_set

log = logging.getLogger(__name__)

RESULTS_SCHEMA = 1


class ExperimentError(Exception):
    pass


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.total if self.total else None

    @property
    def f1(self) -> float | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    @property
    def fpr(self) -> float | None:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else None

    @property
    def base_rate(self) -> float | None:
        return (self.tp + self.fn) / self.total if self.total else None

    def to_json(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "f1": self.f1,
        }

    @classmethod
    def from_json(cls, d: dict) -> Metrics:
        return cls(d["tp"], d["fp"], d["tn"], d["fn"])

    @classmethod
    def from_predictions(cls, predicted: Sequence[bool], actual: Sequence[bool]) -> Metrics:
        tp = fp = tn = fn = 0
        for p, a in zip(predicted, actual, strict=True):
            if p and a:
                tp += 1
            elif p:
                fp += 1
            elif a:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, tn, fn)


def expected_precision(tpr: float, fpr: float, base_rate: float) -> float | None:
    """Precision implied by a detector's TPR/FPR at a given prevalence.

    >>> round(expected_precision(0.9, 0.01, 0.01), 4)
    0.4762
    """
    for name, x in (("tpr", tpr), ("fpr", fpr), ("base_rate", base_rate)):
        if not 0 <= x <= 1:
            raise ValueError(f"{name} must lie in [0, 1], got {x}")
    hits = base_rate * tpr
    denom = hits + (1 - base_rate) * fpr
    return hits / denom if denom > 0 else None


@dataclass
class TestSet:
    texts: list[str]
    labels: list[bool]  # True = non-compliant
    origins: list[tuple[int, int]]

    __test__ = False  # not a pytest class

    @property
    def base_rate(self) -> float:
        return sum(self.labels) / len(self.labels)

    def __len__(self) -> int:
        return len(self.texts)


@dataclass(frozen=True)
class RunSpec:
    rule: str
    config: LearningConfig
    repetitions: int = 100
    master_seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass(frozen=True)
class RunResult:
    rule: str
    config: LearningConfig
    repetition: int
    seed: int
    balanced: Metrics
    realistic: Metrics
    realistic_base_rate: float

    @property
    def sort_key(self):
        return (self.rule, self.config.size, self.config.ratio, self.repetition)

    def to_json(self) -> dict:
        return {
            "schema": RESULTS_SCHEMA,
            "rule": self.rule,
            "config": self.config.name,
            "size": self.config.size,
            "ratio": self.config.ratio,
            "repetition": self.repetition,
            "seed": self.seed,
            "balanced": self.balanced.to_json(),
            "realistic": self.realistic.to_json(),
            "realistic_base_rate": self.realistic_base_rate,
        }

    @classmethod
    def from_json(cls, d: dict) -> RunResult:
        if d.get("schema") != RESULTS_SCHEMA:
            raise ValueError(f"unsupported results schema {d.get('schema')!r}")
        return cls(
            d["rule"],
            LearningConfig(d["size"], d["ratio"]),
            d["repetition"],
            d["seed"],
            Metrics.from_json(d["balanced"]),
            Metrics.from_json(d["realistic"]),
            d["realistic_base_rate"],
        )


def child_seed(master_seed: int, rule: str, config: LearningConfig, repetition: int) -> int:
    key = f"{master_seed}|{rule}|{config.size}|{config.ratio}|{repetition}".encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little") & (2**63 - 1)


# -- test sets -----------------------------------------------------------------


def _as_test(examples: Iterable[Example]) -> TestSet:
    examples = list(examples)
    return TestSet(
        [ex.text for ex in examples],
        [ex.kind == VIOLATION for ex in examples],
        [ex.origin for ex in examples],
    )


def build_balanced_test(pool: ExamplePool, ts: TrainingSet, rng: random.Random) -> TestSet:
    """Same per-kind counts as the training set, from unused origins, no replacement."""
    used = ts.drawn_instances
    picked: list[Example] = []
    for kind, n in ts.config.counts().items():
        if n == 0:
            continue
        candidates = [ex for ex in pool.category(kind) if ex.origin not in used]
        if len(candidates) < n:
            raise ExperimentError(
                f"{pool.rule}: balanced test needs {n} {kind} examples outside the training set, "
                f"only {len(candidates)} left"
            )
        picked.extend(rng.sample(candidates, n))
    return _as_test(picked)


def build_realistic_test(
    view: CorpusView,
    index: ViolationIndex,
    ts: TrainingSet,
    rule: str,
    n_files: int = 5,
    rng: random.Random | None = None,
) -> TestSet:
    """All in-threshold lines of ``n_files`` random eligible files, labelled by the oracle."""
    rng = rng or random.Random(0)
    flagged = index.keys(rule)
    touched = {file_id for file_id, _ in ts.drawn_instances}
    eligible = sorted(index.files_with_violations(rule) - touched)
    if len(eligible) < n_files:
        raise ExperimentError(
            f"{rule}: realistic test needs {n_files} files with a violation and no training line, "
            f"only {len(eligible)} eligible"
        )
    by_file = view.lines_by_file()
    texts, labels, origins = [], [], []
    for file_id in rng.sample(eligible, n_files):
        for line in by_file[file_id]:
            texts.append(line.text)
            labels.append(line.key in flagged)
            origins.append(line.key)
    return TestSet(texts, labels, origins)


def evaluate(backend: Backend, model, test: TestSet) -> Metrics:
    if not len(test):
        raise ExperimentError("cannot evaluate on an empty test set")
    return Metrics.from_predictions(backend.predict(model, test.texts), test.labels)


# -- runs ----------------------------------------------------------------------


def run_repetition(
    spec: RunSpec,
    repetition: int,
    pool: ExamplePool,
    view: CorpusView,
    index: ViolationIndex,
    backend: Backend,
    n_files: int = 5,
) -> RunResult:
    seed = child_seed(spec.master_seed, spec.rule, spec.config, repetition)
    rng = random.Random(seed)
    try:
        ts = sample_training_set(pool, spec.config, rng)
        model = backend.train(ts, seed)
        balanced_test = build_balanced_test(pool, ts, rng)
        realistic_test = build_realistic_test(view, index, ts, spec.rule, n_files, rng)
    except Exception as exc:
        raise ExperimentError(f"{spec.rule} {spec.config.name} repetition {repetition}: {exc}") from exc
    return RunResult(
        spec.rule,
        spec.config,
        repetition,
        seed,
        evaluate(backend, model, balanced_test),
        evaluate(backend, model, realistic_test),
        realistic_test.base_rate,
    )


def run_experiment(
    spec: RunSpec,
    pool: ExamplePool,
    view: CorpusView,
    index: ViolationIndex,
    backend: Backend,
    n_files: int = 5,
) -> list[RunResult]:
    if pool.rule != spec.rule:
        raise ExperimentError(f"pool is for {pool.rule}, run spec for {spec.rule}")
    return [run_repetition(spec, i, pool, view, index, backend, n_files) for i in range(spec.repetitions)]


_WORKER: dict = {}


def _init_worker(pools, view, index, backend, n_files):
    _WORKER.update(pools=pools, view=view, index=index, backend=backend, n_files=n_files)


def _run_cell(spec: RunSpec) -> list[RunResult]:
    w = _WORKER
    return run_experiment(spec, w["pools"][spec.rule], w["view"], w["index"], w["backend"], w["n_files"])


def run_matrix(
    pools: Sequence[ExamplePool],
    view: CorpusView,
    index: ViolationIndex,
    configs: Sequence[LearningConfig],
    repetitions: int,
    master_seed: int,
    backend: Backend,
    n_files: int = 5,
    jobs: int = 1,
) -> list[RunResult]:
    """Every rule x config cell; results sorted by (rule, size, ratio, repetition)."""
    specs = [RunSpec(p.rule, c, repetitions, master_seed) for p in pools for c in configs]
    by_rule = {p.rule: p for p in pools}
    results: list[RunResult] = []
    if jobs > 1:
        import multiprocessing
        from concurrent.futures import ProcessPoolExecutor

        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(jobs, ctx, _init_worker, (by_rule, view, index, backend, n_files)) as ex:
            for spec, cell in zip(specs, ex.map(_run_cell, specs)):
                log.info("%s %s: %d runs", spec.rule, spec.config.name, len(cell))
                results.extend(cell)
    else:
        for spec in specs:
            results.extend(run_experiment(spec, by_rule[spec.rule], view, index, backend, n_files))
            log.info("%s %s: %d runs", spec.rule, spec.config.name, spec.repetitions)
    return sorted(results, key=lambda r: r.sort_key)


def write_results(results: Iterable[RunResult], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as out:
        for r in sorted(results, key=lambda r: r.sort_key):
            out.write(json.dumps(r.to_json()) + "\n")


def read_results(path: str | os.PathLike) -> list[RunResult]:
    with open(path, encoding="utf-8") as fh:
        return [RunResult.from_json(json.loads(raw)) for raw in fh if raw.strip()]
