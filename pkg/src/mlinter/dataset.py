"""Per-rule example pools and training-set sampling."""

from __future__ import annotations

import json
import logging
import math
import os
import random
from dataclasses import dataclass
from typing import Sequence

from mlinter.corpus import CorpusView, ViolationIndex

log = logging.getLogger(__name__)

NON_COMPLIANT = "non_compliant"
COMPLIANT = "compliant"

VIOLATION = "violation"
FIXED = "fixed"
EXTANT = "extant"
KINDS = (VIOLATION, FIXED, EXTANT)

SIZES = {"S": 10, "M": 100, "L": 1000}
RATIOS = ("VF", "VE", "VFE")


class DatasetError(Exception):
    pass


@dataclass(frozen=True, slots=True)
class Example:
    text: str
    kind: str
    file_id: int
    line_no: int

    @property
    def label(self) -> str:
        return NON_COMPLIANT if self.kind == VIOLATION else COMPLIANT

    @property
    def origin(self) -> tuple[int, int]:
        """Source position; a fixed example shares it with its violation."""
        return (self.file_id, self.line_no)

    def to_json(self) -> dict:
        origin = {"file_id": self.file_id, "line_no": self.line_no}
        if self.kind == FIXED:
            origin = {"fixed_from": origin}
        return {"kind": self.kind, "label": self.label, "text": self.text, "origin": origin}

    @classmethod
    def from_json(cls, d: dict) -> Example:
        origin = d["origin"].get("fixed_from", d["origin"])
        return cls(d["text"], d["kind"], origin["file_id"], origin["line_no"])


@dataclass
class ExamplePool:
    rule: str
    violations: list[Example]
    fixed: list[Example]
    extant: list[Example]

    def category(self, kind: str) -> list[Example]:
        return {VIOLATION: self.violations, FIXED: self.fixed, EXTANT: self.extant}[kind]


@dataclass(frozen=True)
class LearningConfig:
    size: int
    ratio: str

    def __post_init__(self):
        if self.ratio not in RATIOS:
            raise ValueError(f"ratio must be one of {RATIOS}, got {self.ratio!r}")
        if self.size < 2:
            raise ValueError(f"training size must be at least 2, got {self.size}")

    @classmethod
    def parse(cls, size: str | int, ratio: str) -> LearningConfig:
        if isinstance(size, str):
            size = SIZES[size] if size in SIZES else int(size)
        return cls(size, ratio)

    @property
    def size_name(self) -> str:
        for name, n in SIZES.items():
            if n == self.size:
                return name
        return str(self.size)

    @property
    def name(self) -> str:
        return f"{self.size_name}/{self.ratio}"

    def counts(self) -> dict[str, int]:
        """Per-kind example counts; odd remainders favour violations, then fixed."""
        v = math.ceil(self.size / 2)
        rest = self.size - v
        if self.ratio == "VF":
            return {VIOLATION: v, FIXED: rest, EXTANT: 0}
        if self.ratio == "VE":
            return {VIOLATION: v, FIXED: 0, EXTANT: rest}
        fixed = math.ceil(rest / 2)
        return {VIOLATION: v, FIXED: fixed, EXTANT: rest - fixed}


def all_configs(sizes: Sequence[str] = ("S", "M", "L"), ratios: Sequence[str] = RATIOS) -> list[LearningConfig]:
    return [LearningConfig.parse(s, r) for s in sizes for r in ratios]


@dataclass
class TrainingSet:
    rule: str
    config: LearningConfig
    examples: list[Example]

    @property
    def drawn_instances(self) -> set[tuple[int, int]]:
        return {ex.origin for ex in self.examples}

    def texts(self) -> list[str]:
        return [ex.text for ex in self.examples]

    def labels(self) -> list[int]:
        return [int(ex.kind == VIOLATION) for ex in self.examples]


def build_pools(
    index: ViolationIndex,
    view: CorpusView,
    rules: Sequence[str],
    min_examples: int = 1000,
) -> list[ExamplePool]:
    """One pool per rule with at least ``min_examples`` violations."""
    pools = []
    excluded = {}
    # extant examples are shared between pools; one object per view line
    every_line = [Example(line.text, EXTANT, *line.key) for line in view.lines]
    for rule in rules:
        entries = index.entries.get(rule, [])
        if len(entries) < min_examples:
            excluded[rule] = len(entries)
            continue
        flagged = index.keys(rule)
        pools.append(
            ExamplePool(
                rule,
                [Example(v.line.text, VIOLATION, *v.line.key) for v in entries],
                [Example(v.fixed_text, FIXED, *v.line.key) for v in entries],
                [ex for ex in every_line if ex.origin not in flagged],
            )
        )
    for rule, n in excluded.items():
        log.warning("excluding %s: %d violations < %d", rule, n, min_examples)
    if not pools:
        raise DatasetError(f"every rule has fewer than {min_examples} violations; lower --min-examples")
    return pools


def sample_training_set(pool: ExamplePool, config: LearningConfig, rng: random.Random) -> TrainingSet:
    """Draw each category with replacement, in violation/fixed/extant order."""
    examples: list[Example] = []
    for kind, n in config.counts().items():
        if n == 0:
            continue
        source = pool.category(kind)
        if not source:
            raise DatasetError(f"{pool.rule}: {config.name} needs {kind} examples but that pool is empty")
        examples.extend(rng.choices(source, k=n))
    return TrainingSet(pool.rule, config, examples)


def write_pool(pool: ExamplePool, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as out:
        for kind in KINDS:
            for ex in pool.category(kind):
                out.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")


def read_pool(rule: str, path: str | os.PathLike, shared: dict | None = None) -> ExamplePool:
    """Load a pool; pass the same ``shared`` dict across rules to reuse identical examples."""
    pool = ExamplePool(rule, [], [], [])
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            ex = Example.from_json(json.loads(raw))
            if shared is not None:
                ex = shared.setdefault(ex, ex)
            pool.category(ex.kind).append(ex)
    return pool
