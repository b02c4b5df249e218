"""Command-line pipeline: ingest, threshold, analyze, dataset, train, experiment, stats, lint.

Every stage reads and writes files in a work directory (``--work``, default
``./mlinter-work``)::

    corpus.jsonl, files.jsonl     ingest
    threshold.json                threshold
    violations.jsonl, corpus_stats.json
                                  analyze
    pools/<rule>.jsonl, pools/pools.json
                                  dataset
    results.jsonl, run_manifest.json
                                  experiment
    report/                       stats

``--config FILE`` reads a TOML file whose keys mirror the long flag names
(``min-examples`` or ``min_examples``). Top-level keys apply to every command
that has the flag, a ``[command]`` table to that command only. Flags given on
the command line win. ``MLINTER_SEED`` sets the default seed.

Exit codes: 0 success, 1 error (including a missing upstream file), 2 when
``lint`` reports warnings.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import random
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from mlinter import __version__
from mlinter import classifier as clf
from mlinter import corpus, dataset, experiment, stats, synth
from mlinter.lexer import significant, tokenize
from mlinter.oracle import RULES, validate_rules

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("mlinter")

CORPUS = "corpus.jsonl"
FILES = "files.jsonl"
THRESHOLD = "threshold.json"
VIOLATIONS = "violations.jsonl"
CORPUS_STATS = "corpus_stats.json"
POOLS_DIR = "pools"
POOLS_META = "pools.json"
RESULTS = "results.jsonl"
RUN_MANIFEST = "run_manifest.json"
REPORT_DIR = "report"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------


def _split(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        items = []
        for v in value:
            items.extend(_split(v))
        return items
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise CliError(f"missing {path}; run `mlinter {producer}` first")
    return path


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _rules(args) -> list[str]:
    return validate_rules(_split(args.rules)) if args.rules else list(RULES)


def _load_view(work: Path) -> tuple[corpus.CorpusStore, corpus.CorpusView]:
    store = corpus.read_store(_need(work / CORPUS, "ingest"), work / FILES)
    threshold = _read_json(_need(work / THRESHOLD, "threshold"))["threshold"]
    return store, corpus.filter_lines(store, threshold)


def _load_index(work: Path, view: corpus.CorpusView) -> corpus.ViolationIndex:
    path = _need(work / VIOLATIONS, "analyze")
    rules = list(_read_json(_need(work / CORPUS_STATS, "analyze"))["rules"])
    return corpus.read_index(path, view, rules)


def _load_pools(work: Path, rules: Sequence[str] | None = None) -> list[dataset.ExamplePool]:
    meta = _read_json(_need(work / POOLS_DIR / POOLS_META, "dataset"))
    available = meta["rules"]
    wanted = available if rules is None else [r for r in rules if r in available]
    missing = [] if rules is None else [r for r in rules if r not in available]
    if missing:
        raise CliError(f"no example pool for {', '.join(missing)} (excluded or not built)")
    shared: dict = {}
    return [dataset.read_pool(r, _need(work / POOLS_DIR / f"{r}.jsonl", "dataset"), shared) for r in wanted]


def _classifier_config(args, seed: int = 0) -> clf.ClassifierConfig:
    return clf.ClassifierConfig(
        feature_dims=args.feature_dims,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        l2=args.l2,
        batch_size=args.batch_size,
        decision_threshold=args.decision_threshold,
        seed=seed,
    )


def file_digest(paths: Sequence[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.name.encode() + b"\0")
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        h.update(b"\0")
    return h.hexdigest()


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    tool_version: str
    master_seed: int
    config: dict
    config_digest: str
    corpus_digest: str
    started_at: str
    finished_at: str


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# -- commands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    config = synth.SynthConfig(
        projects=args.projects,
        files_per_project=args.files_per_project,
        lines_per_file=(args.min_lines, args.max_lines),
        seed=args.seed,
    )
    roots = synth.generate_corpus(args.out, config)
    print(f"wrote {len(roots)} projects to {args.out} (manifest: {Path(args.out) / 'manifest.json'})")
    return 0


def cmd_ingest(args) -> int:
    roots = _split(args.root) if args.root else []
    manifest = corpus.load_manifest(args.manifest) if args.manifest else None
    if not roots and not manifest:
        raise CliError("nothing to ingest: pass --root and/or --manifest")
    store = corpus.ingest(
        roots,
        manifest,
        extensions=tuple(args.extension or corpus.DEFAULT_EXTENSIONS),
        exclude_suffixes=tuple(args.exclude_suffix or corpus.DEFAULT_EXCLUDE_SUFFIXES),
    )
    work = Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    corpus.write_store(store, work / CORPUS, work / FILES)
    print(f"ingested {len(store.files)} files, {len(store.lines)} lines into {work / CORPUS}")
    return 0


def cmd_threshold(args) -> int:
    work = Path(args.work)
    store = corpus.read_store(_need(work / CORPUS, "ingest"), work / FILES)
    z = corpus.z_for_confidence(args.confidence)
    n = corpus.cochran_sample_size(z, args.precision, args.proportion)
    threshold = corpus.compute_length_threshold(store, n, args.quantile, random.Random(args.seed))
    _write_json(
        work / THRESHOLD,
        {
            "threshold": threshold,
            "sample_size": n,
            "confidence": args.confidence,
            "z": z,
            "precision": args.precision,
            "proportion": args.proportion,
            "quantile": args.quantile,
            "seed": args.seed,
        },
    )
    print(f"length threshold: {threshold}")
    print(f"sample size: {n}")
    return 0


def cmd_analyze(args) -> int:
    work = Path(args.work)
    rules = _rules(args)
    store, view = _load_view(work)
    index = corpus.analyze(view, rules, jobs=args.jobs)
    corpus.write_index(index, work / VIOLATIONS)
    summary = corpus.stats(store, view, index)
    _write_json(work / CORPUS_STATS, summary.to_json() | {"threshold": view.max_len})
    print(f"{summary.files} files, {summary.lines} lines within {view.max_len} characters")
    for rule, s in summary.per_rule.items():
        print(f"  {rule}: {s.violation_count} violations ({float(s.ratio):.4%})")
    return 0


def cmd_dataset(args) -> int:
    work = Path(args.work)
    _, view = _load_view(work)
    index = _load_index(work, view)
    rules = [r for r in _rules(args) if r in index.rules]
    pools = dataset.build_pools(index, view, rules, args.min_examples)
    out = work / POOLS_DIR
    out.mkdir(exist_ok=True)
    for stale in out.glob("*.jsonl"):
        stale.unlink()
    for pool in pools:
        dataset.write_pool(pool, out / f"{pool.rule}.jsonl")
        print(f"{pool.rule}: {len(pool.violations)} violations, {len(pool.fixed)} fixed, {len(pool.extant)} extant")
    kept = [p.rule for p in pools]
    excluded = {r: len(index.entries.get(r, [])) for r in rules if r not in kept}
    for rule, n in excluded.items():
        print(f"{rule}: excluded ({n} < {args.min_examples} violations)")
    _write_json(out / POOLS_META, {"min_examples": args.min_examples, "rules": kept, "excluded": excluded})
    return 0


def cmd_train(args) -> int:
    work = Path(args.work)
    [pool] = _load_pools(work, [validate_rules([args.rule])[0]])
    config = dataset.LearningConfig.parse(args.size, args.ratio)
    rng = random.Random(args.seed)
    ts = dataset.sample_training_set(pool, config, rng)
    model = clf.train(ts, _classifier_config(args, args.seed))
    out = Path(args.out) if args.out else work / "models" / f"{args.rule}.{config.size_name}-{config.ratio}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    clf.save_model(model, out)
    print(f"trained {args.rule} on {config.name} ({len(ts.examples)} examples); final loss {model.loss_trace[-1]:.4f}")
    print(f"model written to {out}")
    return 0


def cmd_experiment(args) -> int:
    work = Path(args.work)
    started = _now()
    rules = _rules(args)
    sizes, ratios = _split(args.sizes), _split(args.ratios)
    configs = dataset.all_configs(sizes, ratios)
    pools = _load_pools(work, rules if args.rules else None)
    _, view = _load_view(work)
    index = _load_index(work, view)
    cconf = _classifier_config(args)
    backend = clf.LinearBackend(cconf)
    results = experiment.run_matrix(pools, view, index, configs, args.reps, args.seed, backend, args.n_files, args.jobs)
    experiment.write_results(results, work / RESULTS)
    run_config = {
        "rules": [p.rule for p in pools],
        "configs": [c.name for c in configs],
        "repetitions": args.reps,
        "n_files": args.n_files,
        "classifier": asdict(cconf),
    }
    inputs = [work / CORPUS, work / THRESHOLD, work / VIOLATIONS] + [work / POOLS_DIR / f"{p.rule}.jsonl" for p in pools]
    manifest = RunManifest(
        __version__, args.seed, run_config, config_digest(run_config), file_digest(inputs), started, _now()
    )
    _write_json(work / RUN_MANIFEST, asdict(manifest))
    print(f"{len(results)} runs ({len(pools)} rules x {len(configs)} configs x {args.reps}) written to {work / RESULTS}")
    return 0


def cmd_stats(args) -> int:
    work = Path(args.work)
    path = Path(args.results) if args.results else _need(work / RESULTS, "experiment")
    if not path.exists():
        raise CliError(f"missing {path}")
    results = experiment.read_results(path)
    if not results:
        raise CliError(f"{path} holds no results")
    out = Path(args.out) if args.out else work / REPORT_DIR
    thresholds = [float(t) for t in _split(args.thresholds)]
    written = stats.emit_report(results, out, thresholds)
    for name in written.values():
        print(name)
    return 0


def cmd_lint(args) -> int:
    if not args.model:
        raise CliError("lint needs at least one --model")
    try:
        models = [clf.load_model(m) for m in args.model]
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load model: {exc}") from exc
    max_len = args.max_len
    if max_len is None and (Path(args.work) / THRESHOLD).exists():
        max_len = _read_json(Path(args.work) / THRESHOLD)["threshold"]
    warnings = []
    for path in args.files:
        try:
            text = Path(path).read_bytes().decode("utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise CliError(f"cannot read {path}: {exc}") from exc
        for line_no, line in enumerate(corpus.split_lines(text), start=1):
            if max_len is not None and len(line) > max_len:
                continue
            # a line without code tokens gives the model nothing to judge
            if not significant(tokenize(line)):
                continue
            for model in models:
                pred = clf.predict(model, line)
                if pred.non_compliant:
                    warnings.append((path, line_no, model.rule, pred.score))
    warnings.sort(key=lambda w: (w[0], w[1], w[2]))
    for path, line_no, rule, score in warnings:
        print(f"{path}:{line_no}: [{rule}] warning ({score:.3f})")
    return 2 if warnings else 0


# -- parser --------------------------------------------------------------------


def _default_seed() -> int:
    raw = os.environ.get("MLINTER_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"MLINTER_SEED must be an integer, got {raw!r}") from None


def build_parser(seed_default: int = 0) -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--work", default="mlinter-work", help="work directory holding pipeline files (default: %(default)s)")
    common.add_argument("--config", help="TOML file with default values for any flag")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=seed_default, help="random seed (default: $MLINTER_SEED or 0)")

    rules = argparse.ArgumentParser(add_help=False)
    rules.add_argument("--rules", help=f"comma-separated rule ids (default: all of {', '.join(RULES)})")

    learner = argparse.ArgumentParser(add_help=False)
    d = clf.ClassifierConfig()
    learner.add_argument("--feature-dims", type=int, default=d.feature_dims, help="hashed feature space size, power of two (default: %(default)s)")
    learner.add_argument("--epochs", type=int, default=d.epochs, help="SGD epochs (default: %(default)s)")
    learner.add_argument("--learning-rate", type=float, default=d.learning_rate, help="SGD step size (default: %(default)s)")
    learner.add_argument("--l2", type=float, default=d.l2, help="L2 penalty (default: %(default)s)")
    learner.add_argument("--batch-size", type=int, default=d.batch_size, help="SGD mini-batch size (default: %(default)s)")
    learner.add_argument("--decision-threshold", type=float, default=d.decision_threshold, help="score at or above which a line is non-compliant (default: %(default)s)")

    parser = _Parser(prog="mlinter", description="Learn coding practices from linter examples and evaluate them.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    cmds: dict[str, argparse.ArgumentParser] = {}

    def add(name, func, help_, parents=()):
        p = sub.add_parser(name, help=help_, description=help_, parents=[common, *parents])
        p.set_defaults(func=func)
        cmds[name] = p
        return p

    p = add("synth", cmd_synth, "generate a synthetic corpus with planted violations", [seeded])
    p.add_argument("--out", required=True, help="directory to write projects and manifest.json into")
    p.add_argument("--projects", type=int, default=40, help="number of projects (default: %(default)s)")
    p.add_argument("--files-per-project", type=int, default=20, help="files per project (default: %(default)s)")
    p.add_argument("--min-lines", type=int, default=150, help="fewest lines per file (default: %(default)s)")
    p.add_argument("--max-lines", type=int, default=350, help="most lines per file (default: %(default)s)")

    p = add("ingest", cmd_ingest, "split project trees into a line corpus")
    p.add_argument("--root", nargs="+", action="extend", help="project root directories, one project each")
    p.add_argument("--manifest", help="JSON clone manifest [{url, commit_sha, local_path}]")
    p.add_argument("--extension", action="append", help="file extension to include, repeatable (default: .js)")
    p.add_argument("--exclude-suffix", action="append", help="file name suffix to skip, repeatable (default: .min.js)")
    p.add_argument("--out", dest="work", help="alias for --work")

    p = add("threshold", cmd_threshold, "compute the line length threshold from a file sample", [seeded])
    p.add_argument("--confidence", type=float, default=0.95, help="confidence level for the file sample size (default: %(default)s)")
    p.add_argument("--precision", type=float, default=0.05, help="margin of error for the file sample size (default: %(default)s)")
    p.add_argument("--proportion", type=float, default=0.5, help="assumed proportion for the sample size (default: %(default)s)")
    p.add_argument("--quantile", type=float, default=0.99, help="line length quantile used as threshold (default: %(default)s)")

    p = add("analyze", cmd_analyze, "run the rule oracle over lines within the threshold", [rules])
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: %(default)s)")

    p = add("dataset", cmd_dataset, "build per-rule example pools", [rules])
    p.add_argument("--min-examples", type=int, default=1000, help="fewest violations for a rule to be kept (default: %(default)s)")

    p = add("train", cmd_train, "train one classifier from a rule's pool", [seeded, learner])
    p.add_argument("--rule", required=True, help="rule id")
    p.add_argument("--size", default="M", help="training set size: S, M, L or an integer (default: %(default)s)")
    p.add_argument("--ratio", default="VFE", choices=dataset.RATIOS, help="training set composition (default: %(default)s)")
    p.add_argument("--out", help="model file (default: <work>/models/<rule>.<size>-<ratio>.json)")

    p = add("experiment", cmd_experiment, "train and validate classifiers for every rule and configuration", [rules, seeded, learner])
    p.add_argument("--sizes", default="S,M,L", help="comma-separated sizes (default: %(default)s)")
    p.add_argument("--ratios", default="VF,VE,VFE", help="comma-separated ratios (default: %(default)s)")
    p.add_argument("--reps", type=int, default=100, help="repetitions per rule and configuration (default: %(default)s)")
    p.add_argument("--n-files", type=int, default=5, help="files per realistic test set (default: %(default)s)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default: %(default)s)")

    p = add("stats", cmd_stats, "aggregate results into report tables")
    p.add_argument("--results", help="results file (default: <work>/results.jsonl)")
    p.add_argument("--out", help="report directory (default: <work>/report)")
    p.add_argument("--thresholds", default="0.8,0.95", help="precision thresholds for the threshold table (default: %(default)s)")

    p = add("lint", cmd_lint, "flag lines that trained models predict to be non-compliant")
    p.add_argument("files", nargs="*", help="source files to check")
    p.add_argument("--model", action="append", help="model file, repeatable")
    p.add_argument("--max-len", type=int, help="skip longer lines (default: the work directory's threshold, else none)")
    return parser, cmds


def _apply_config(path: str, command: str, sub: argparse.ArgumentParser) -> None:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    dests = {a.dest for a in sub._actions}
    values = {}
    for key, value in data.items():
        if isinstance(value, dict):
            continue
        dest = key.replace("-", "_")
        if dest in dests:
            values[dest] = value
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise CliError(f"{path}: [{command}] must be a table")
    for key, value in section.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest in ("config", "func"):
            raise CliError(f"{path}: unknown option {key!r} for {command}")
        values[dest] = value
    sub.set_defaults(**values)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, cmds = build_parser(_default_seed())
        args = parser.parse_args(argv)
        if args.config:
            _apply_config(args.config, args.command, cmds[args.command])
            args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        return args.func(args)
    except (
        CliError,
        corpus.CorpusError,
        dataset.DatasetError,
        experiment.ExperimentError,
        stats.StatsError,
        clf.TrainingError,
        ValueError,
        OSError,
        KeyError,
    ) as exc:
        print(f"mlinter: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
