"""Line-level corpus: ingestion, length threshold, violation indexing."""

from __future__ import annotations

import json
import logging
import math
import os
import random
import re
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from mlinter.oracle import Finding, apply_edits, check_tokens, validate_rules
from mlinter.lexer import tokenize

log = logging.getLogger(__name__)

DEFAULT_EXTENSIONS = (".js",)
DEFAULT_EXCLUDE_SUFFIXES = (".min.js",)

_NEWLINE_RE = re.compile(r"\r\n|\r|\n")


class CorpusError(Exception):
    pass


@dataclass(frozen=True)
class FileRecord:
    file_id: int
    project: str
    path: str
    commit_sha: str | None
    line_count: int


@dataclass(frozen=True)
class SourceLine:
    file_id: int
    line_no: int
    text: str

    @property
    def length(self) -> int:
        return len(self.text)

    @property
    def key(self) -> tuple[int, int]:
        return (self.file_id, self.line_no)


@dataclass
class CorpusStore:
    files: list[FileRecord]
    lines: list[SourceLine]

    def file(self, file_id: int) -> FileRecord:
        return self.files[file_id]

    def lines_by_file(self) -> dict[int, list[SourceLine]]:
        grouped: dict[int, list[SourceLine]] = defaultdict(list)
        for line in self.lines:
            grouped[line.file_id].append(line)
        return grouped


@dataclass
class CorpusView:
    """The lines of a store that pass the length threshold."""

    store: CorpusStore
    max_len: int
    lines: list[SourceLine]
    _by_file: dict[int, list[SourceLine]] | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def files(self) -> list[FileRecord]:
        return self.store.files

    def lines_by_file(self) -> dict[int, list[SourceLine]]:
        """Lines grouped by file id (computed once; views are not mutated)."""
        if self._by_file is None:
            grouped: dict[int, list[SourceLine]] = defaultdict(list)
            for line in self.lines:
                grouped[line.file_id].append(line)
            self._by_file = dict(grouped)
        return self._by_file


@dataclass(frozen=True)
class Violation:
    line: SourceLine
    findings: tuple[Finding, ...]
    fixed_text: str

    @property
    def finding(self) -> Finding:
        return self.findings[0]


@dataclass
class ViolationIndex:
    """Per-rule violations of a view.

    ``unfixable`` holds lines the rule flags but whose one-pass fix does not
    comply; they are non-compliant yet carry no usable fixed twin.
    """

    rules: list[str]
    entries: dict[str, list[Violation]] = field(default_factory=dict)
    unfixable: dict[str, list[SourceLine]] = field(default_factory=dict)
    _keys: dict[str, frozenset] = field(default_factory=dict, init=False, repr=False, compare=False)

    def keys(self, rule: str) -> frozenset[tuple[int, int]]:
        """Positions of every line the rule flags."""
        if rule not in self._keys:
            keys = {v.line.key for v in self.entries.get(rule, [])}
            keys.update(line.key for line in self.unfixable.get(rule, []))
            self._keys[rule] = frozenset(keys)
        return self._keys[rule]

    def files_with_violations(self, rule: str) -> set[int]:
        return {file_id for file_id, _ in self.keys(rule)}


@dataclass(frozen=True)
class RuleStats:
    violation_count: int
    lines: int

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.violation_count, self.lines) if self.lines else Fraction(0)


@dataclass(frozen=True)
class CorpusStats:
    files: int
    lines: int
    per_rule: dict[str, RuleStats]

    def to_json(self) -> dict:
        return {
            "files": self.files,
            "lines": self.lines,
            "rules": {
                rule: {"violation_count": s.violation_count, "ratio": float(s.ratio)}
                for rule, s in self.per_rule.items()
            },
        }


# -- ingestion ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    url: str
    commit_sha: str
    local_path: str


def load_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    """Read a clone manifest: a JSON array of ``{url, commit_sha, local_path}``.

    Relative ``local_path`` values are resolved against the manifest's folder.
    """
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise CorpusError(f"{path}: manifest must be a JSON array")
    entries = []
    for item in raw:
        local = Path(item["local_path"])
        if not local.is_absolute():
            local = path.parent / local
        entries.append(ManifestEntry(item["url"], item["commit_sha"], str(local)))
    return entries


def split_lines(content: str) -> list[str]:
    lines = _NEWLINE_RE.split(content)
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _wanted(name: str, extensions: Sequence[str], exclude_suffixes: Sequence[str]) -> bool:
    return name.endswith(tuple(extensions)) and not name.endswith(tuple(exclude_suffixes))


def ingest(
    roots: Iterable[str | os.PathLike],
    manifest: Sequence[ManifestEntry] | None = None,
    extensions: Sequence[str] = DEFAULT_EXTENSIONS,
    exclude_suffixes: Sequence[str] = DEFAULT_EXCLUDE_SUFFIXES,
) -> CorpusStore:
    """Split every matching file under ``roots`` into lines.

    Each root is one project, named after its directory. When a manifest
    entry points at a root, that root's files record the entry's commit SHA.
    Roots from the manifest are ingested too when not passed explicitly.
    """
    shas = {os.path.realpath(e.local_path): e.commit_sha for e in manifest or ()}
    root_paths = [Path(r) for r in roots]
    seen = {os.path.realpath(r) for r in root_paths}
    for entry in manifest or ():
        if os.path.realpath(entry.local_path) not in seen:
            root_paths.append(Path(entry.local_path))
            seen.add(os.path.realpath(entry.local_path))

    files: list[FileRecord] = []
    lines: list[SourceLine] = []
    for root in root_paths:
        if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
            raise CorpusError(f"cannot read corpus root {root}")
        project = root.resolve().name
        sha = shas.get(os.path.realpath(root))
        found = []
        for dirpath, dirnames, filenames in os.walk(root):
            dirnames.sort()
            for name in filenames:
                if _wanted(name, extensions, exclude_suffixes):
                    found.append(Path(dirpath, name))
        for path in sorted(found, key=lambda p: p.relative_to(root).as_posix()):
            rel = path.relative_to(root).as_posix()
            try:
                content = path.read_bytes().decode("utf-8")
            except UnicodeDecodeError:
                log.warning("skipping %s: not valid UTF-8", path)
                continue
            except OSError as exc:
                log.warning("skipping %s: %s", path, exc)
                continue
            texts = split_lines(content)
            file_id = len(files)
            files.append(FileRecord(file_id, project, rel, sha, len(texts)))
            lines.extend(SourceLine(file_id, i, text) for i, text in enumerate(texts, start=1))
    return CorpusStore(files, lines)


# -- length threshold ---------------------------------------------------------


def cochran_sample_size(z: float, e: float, p: float) -> int:
    """Cochran's sample size ``ceil(z^2 p (1-p) / e^2)``.

    >>> cochran_sample_size(1.96, 0.05, 0.5)
    385
    """
    if not z > 0:
        raise ValueError(f"z must be positive, got {z}")
    if not 0 < e <= 1:
        raise ValueError(f"margin of error must lie in (0, 1], got {e}")
    if not 0 <= p <= 1:
        raise ValueError(f"proportion must lie in [0, 1], got {p}")
    n = z * z * p * (1 - p) / (e * e)
    # float noise must not push an exact integer (e.g. 100.00000000000001) up a step
    return math.ceil(round(n, 9))


def z_for_confidence(confidence: float) -> float:
    """Two-sided normal critical value, rounded to two decimals (0.95 -> 1.96)."""
    from statistics import NormalDist

    if not 0 < confidence < 1:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    return round(NormalDist().inv_cdf(0.5 + confidence / 2), 2)


def nearest_rank(sorted_values: Sequence, q: float):
    """Value at 1-based rank ``ceil(q * N)`` (rank 1 for q == 0)."""
    if not sorted_values:
        raise ValueError("nearest_rank of an empty sequence")
    rank = max(1, math.ceil(round(q * len(sorted_values), 9)))
    return sorted_values[rank - 1]


def compute_length_threshold(store: CorpusStore, n_files: int, q: float, rng: random.Random) -> int:
    """Nearest-rank ``q`` quantile of line lengths over a file sample."""
    if not store.files:
        raise CorpusError("cannot compute a length threshold on an empty corpus")
    if not 0 < q < 1:
        raise ValueError(f"quantile must lie in (0, 1), got {q}")
    if n_files < 1:
        raise ValueError("n_files must be at least 1")
    file_ids = [f.file_id for f in store.files]
    chosen = set(rng.sample(file_ids, min(n_files, len(file_ids))))
    lengths = sorted(line.length for line in store.lines if line.file_id in chosen)
    if not lengths:
        raise CorpusError("sampled files contain no lines")
    return nearest_rank(lengths, q)


def filter_lines(store: CorpusStore | CorpusView, max_len: int) -> CorpusView:
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")
    base = store.store if isinstance(store, CorpusView) else store
    return CorpusView(base, max_len, [line for line in store.lines if line.length <= max_len])


# -- analysis ----------------------------------------------------------------


def _analyze_chunk(lines: list[SourceLine], rules: list[str]) -> tuple[dict, dict]:
    found: dict[str, list[Violation]] = {rule: [] for rule in rules}
    unfixable: dict[str, list[SourceLine]] = {rule: [] for rule in rules}
    for line in lines:
        tokens = tokenize(line.text)
        for rule in rules:
            findings = check_tokens(rule, tokens)
            if not findings:
                continue
            fixed = apply_edits(line.text, (f.fix for f in findings))
            if check_tokens(rule, tokenize(fixed)):
                unfixable[rule].append(line)
                continue
            found[rule].append(Violation(line, tuple(findings), fixed))
    return found, unfixable


def analyze(view: CorpusView, rules: Sequence[str], jobs: int = 1) -> ViolationIndex:
    """Run every rule on every line of the view.

    A line whose one-pass fix still violates the rule (rare token merges such
    as ``a['k']function``) goes to ``unfixable`` instead of ``entries``.
    """
    rules = validate_rules(rules)
    if not rules:
        raise ValueError("analyze needs at least one rule")
    if jobs > 1 and len(view.lines) > 1000:
        from concurrent.futures import ProcessPoolExecutor

        size = math.ceil(len(view.lines) / jobs)
        chunks = [view.lines[i : i + size] for i in range(0, len(view.lines), size)]
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_analyze_chunk, chunks, [rules] * len(chunks)))
    else:
        parts = [_analyze_chunk(view.lines, rules)]
    entries = {rule: [v for part in parts for v in part[0][rule]] for rule in rules}
    unfixable = {rule: [line for part in parts for line in part[1][rule]] for rule in rules}
    for rule, dropped in unfixable.items():
        if dropped:
            log.info("%s: %d flagged line(s) without a converging one-pass fix", rule, len(dropped))
    return ViolationIndex(rules, entries, unfixable)


def stats(store: CorpusStore, view: CorpusView, index: ViolationIndex) -> CorpusStats:
    n = len(view.lines)
    per_rule = {rule: RuleStats(len(index.keys(rule)), n) for rule in index.rules}
    return CorpusStats(len(store.files), n, per_rule)


# -- persistence ---------------------------------------------------------------


def write_store(store: CorpusStore, corpus_path: str | os.PathLike, files_path: str | os.PathLike) -> None:
    """Write one JSON record per line, plus a file table (keeps empty files)."""
    with open(corpus_path, "w", encoding="utf-8") as out:
        for line in store.lines:
            rec = store.files[line.file_id]
            out.write(
                json.dumps(
                    {
                        "file_id": line.file_id,
                        "project": rec.project,
                        "path": rec.path,
                        "sha": rec.commit_sha,
                        "line_no": line.line_no,
                        "text": line.text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    with open(files_path, "w", encoding="utf-8") as out:
        for rec in store.files:
            out.write(
                json.dumps(
                    {
                        "file_id": rec.file_id,
                        "project": rec.project,
                        "path": rec.path,
                        "sha": rec.commit_sha,
                        "line_count": rec.line_count,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_store(corpus_path: str | os.PathLike, files_path: str | os.PathLike | None = None) -> CorpusStore:
    records: dict[int, FileRecord] = {}
    if files_path is not None and os.path.exists(files_path):
        with open(files_path, encoding="utf-8") as fh:
            for raw in fh:
                d = json.loads(raw)
                records[d["file_id"]] = FileRecord(d["file_id"], d["project"], d["path"], d["sha"], d["line_count"])
    lines = []
    counts: dict[int, int] = defaultdict(int)
    with open(corpus_path, encoding="utf-8") as fh:
        for raw in fh:
            d = json.loads(raw)
            lines.append(SourceLine(d["file_id"], d["line_no"], d["text"]))
            counts[d["file_id"]] += 1
            if d["file_id"] not in records:
                records[d["file_id"]] = FileRecord(d["file_id"], d["project"], d["path"], d["sha"], 0)
    files = [records[i] for i in sorted(records)]
    if [f.file_id for f in files] != list(range(len(files))):
        raise CorpusError(f"{corpus_path}: file ids are not contiguous")
    files = [f if f.line_count else FileRecord(f.file_id, f.project, f.path, f.commit_sha, counts[f.file_id]) for f in files]
    return CorpusStore(files, lines)


def write_index(index: ViolationIndex, path: str | os.PathLike) -> None:
    """One record per flagged (rule, line); unfixable lines carry ``fixed_text: null``."""
    with open(path, "w", encoding="utf-8") as out:
        for rule in index.rules:
            records = [(v.line, v.finding, v.fixed_text) for v in index.entries.get(rule, [])]
            for line in index.unfixable.get(rule, []):
                records.append((line, check_tokens(rule, tokenize(line.text))[0], None))
            records.sort(key=lambda r: r[0].key)
            for line, finding, fixed_text in records:
                out.write(
                    json.dumps(
                        {
                            "rule": rule,
                            "file_id": line.file_id,
                            "line_no": line.line_no,
                            "start_col": finding.start_col,
                            "end_col": finding.end_col,
                            "fixed_text": fixed_text,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )


def read_index(path: str | os.PathLike, view: CorpusView, rules: Sequence[str] | None = None) -> ViolationIndex:
    """Load an index, re-deriving the full findings from the oracle."""
    by_key = {line.key: line for line in view.lines}
    entries: dict[str, list[Violation]] = defaultdict(list)
    unfixable: dict[str, list[SourceLine]] = defaultdict(list)
    seen_rules: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            d = json.loads(raw)
            rule = d["rule"]
            if rule not in seen_rules:
                seen_rules.append(rule)
            line = by_key.get((d["file_id"], d["line_no"]))
            if line is None:
                raise CorpusError(f"{path}: line {d['file_id']}:{d['line_no']} is not in the corpus view")
            if d["fixed_text"] is None:
                unfixable[rule].append(line)
                continue
            findings = tuple(check_tokens(rule, tokenize(line.text)))
            entries[rule].append(Violation(line, findings, d["fixed_text"]))
    rules = list(rules) if rules is not None else seen_rules
    return ViolationIndex(
        rules,
        {rule: entries.get(rule, []) for rule in rules},
        {rule: unfixable.get(rule, []) for rule in rules},
    )
