"""Acceptance suite: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -s`` (or ``python
tests/test_acceptance.py``) to see the verdict lines; they are also written
to ``acceptance_report.txt`` next to this file's package root.
"""

from __future__ import annotations

import json
import random
import sys
import time
from pathlib import Path

import pytest

from mlinter import classifier as clf
from mlinter import corpus, dataset, experiment, stats, synth
from mlinter.cli import main as cli_main
from mlinter.corpus import cochran_sample_size
from mlinter.experiment import expected_precision
from mlinter.lexer import tokenize
from mlinter.oracle import RULES, apply_fixes, check

sys.path.insert(0, str(Path(__file__).parent))
from fuzzlines import fuzz_lines  # noqa: E402
from test_oracle import load_fixture  # noqa: E402
from test_stats import brute_force_p, tie_free_pair  # noqa: E402

REPORT = Path(__file__).resolve().parent.parent / "acceptance_report.txt"
FIXTURES = Path(__file__).parent / "fixtures"
_verdicts: dict[int, str] = {}


def verdict(capsys, number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} -- {detail}"
    _verdicts[number] = line
    with capsys.disabled():
        print("\n" + line)
    REPORT.write_text("\n".join(_verdicts[k] for k in sorted(_verdicts)) + "\n", encoding="utf-8")
    assert ok, line


# -- shared synthetic experiment ------------------------------------------------

REPS = 20
MASTER_SEED = 2026


@pytest.fixture(scope="module")
def phenomenon(tmp_path_factory):
    """The full 8 rules x 9 configs x 20 reps matrix on a default synthetic corpus."""
    root = tmp_path_factory.mktemp("phenomenon")
    started = time.perf_counter()
    synth.generate_corpus(root, synth.SynthConfig())
    store = corpus.ingest([], corpus.load_manifest(root / "manifest.json"))
    n_files = cochran_sample_size(corpus.z_for_confidence(0.95), 0.05, 0.5)
    threshold = corpus.compute_length_threshold(store, n_files, 0.99, random.Random(MASTER_SEED))
    view = corpus.filter_lines(store, threshold)
    index = corpus.analyze(view, RULES)
    pools = dataset.build_pools(index, view, RULES, min_examples=1000)
    backend = clf.LinearBackend()
    configs = dataset.all_configs()
    results = experiment.run_matrix(pools, view, index, configs, REPS, MASTER_SEED, backend)
    return {
        "store": store,
        "view": view,
        "index": index,
        "pools": {p.rule: p for p in pools},
        "results": results,
        "backend": backend,
        "seconds": time.perf_counter() - started,
    }


# -- criteria ------------------------------------------------------------------


def test_criterion_1_cochran(capsys):
    n = cochran_sample_size(1.96, 0.05, 0.5)
    verdict(capsys, 1, "Cochran sample size", n == 385, f"cochran_sample_size(1.96, 0.05, 0.5) = {n}")


def test_criterion_2_oracle_fixtures(capsys):
    started = time.perf_counter()
    problems = []
    counts = {}
    for rule in RULES:
        cases = load_fixture(rule)
        pos = sum(1 for _, c in cases if c["spans"])
        counts[rule] = (pos, len(cases) - pos)
        if pos < 20 or len(cases) - pos < 20:
            problems.append(f"{rule}: only {pos} positive / {len(cases) - pos} negative")
        for line, case in cases:
            if [list(f.span) for f in check(rule, line)] != case["spans"]:
                problems.append(f"{rule}: disagreement on {line!r}")
    lines = [line for rule in RULES for line, _ in load_fixture(rule)] + fuzz_lines(10_000, seed=2026)
    for line in lines:
        for rule in RULES:
            current = line
            for _ in range(3):
                fixed = apply_fixes(rule, current)
                if fixed == current:
                    break
                current = fixed
            if check(rule, current):
                problems.append(f"{rule}: no fixed point within 3 passes for {line!r}")
    elapsed = time.perf_counter() - started
    ok = not problems and elapsed < 30
    detail = f"{sum(p for p, _ in counts.values())} positive / {sum(n for _, n in counts.values())} negative fixture lines, {len(lines)} lines checked for convergence, {elapsed:.1f}s"
    verdict(capsys, 2, "oracle fixtures and fix convergence", ok, detail + ("" if ok else f"; {problems[:3]}"))


def test_criterion_3_lexer_round_trip(capsys):
    rng = random.Random(3)
    printable = [chr(c) for c in range(32, 127)] + ["\t", "é", "λ", "€"]
    lines = ["".join(rng.choice(printable) for _ in range(rng.randint(0, 80))) for _ in range(5_000)]
    lines += fuzz_lines(5_000, seed=33)
    failures = [line for line in lines if "".join(t.text for t in tokenize(line)) != line]
    verdict(capsys, 3, "lexer round-trip", not failures, f"{len(lines)} random printable lines, {len(failures)} failures")


def test_criterion_4_statistics_oracle(capsys):
    started = time.perf_counter()
    rng = random.Random(4)
    mismatches = 0
    for _ in range(1000):
        xs, ys = tie_free_pair(rng)
        if stats.mann_whitney_u(xs, ys).p != brute_force_p(xs, ys):
            mismatches += 1
    rbc_ok = (
        stats.rank_biserial([4, 5, 6], [1, 2, 3]) == 1
        and stats.rank_biserial([2, 2], [2, 2, 2]) == 0
        and stats.rank_biserial([1, 2, 3], [4, 5, 6]) == -1
    )
    bonf_ok = (
        stats.bonferroni([0.01, 0.02, 0.5]) == [0.03, 0.06, 1.0]
        and stats.bonferroni([0]) == [0]
        and stats.bonferroni([0.42]) == [0.42]
    )
    elapsed = time.perf_counter() - started
    ok = mismatches == 0 and rbc_ok and bonf_ok and elapsed < 60
    verdict(capsys, 4, "statistics oracle equivalence", ok, f"{mismatches}/1000 exact-p mismatches, RBC boundaries {'exact' if rbc_ok else 'WRONG'}, Bonferroni {'exact' if bonf_ok else 'WRONG'}, {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_5_metric_identity(capsys, phenomenon):
    checked = worst = 0.0
    bad = 0
    for r in phenomenon["results"]:
        for m in (r.balanced, r.realistic):
            if m.precision is None:
                continue
            predicted = expected_precision(m.recall, m.fpr, m.base_rate)
            gap = abs(predicted - m.precision)
            worst = max(worst, gap)
            checked += 1
            bad += gap > 1e-9
    verdict(capsys, 5, "precision equals expected_precision(recall, FPR, base rate)", bad == 0 and checked > 0, f"{int(checked)} evaluations, max gap {worst:.2e}")


@pytest.mark.slow
def test_criterion_6_phenomenon(capsys, phenomenon):
    store, view, index, results = phenomenon["store"], phenomenon["view"], phenomenon["index"], phenomenon["results"]
    parts = []
    rates = {rule: len(index.keys(rule)) / len(view.lines) for rule in RULES}
    corpus_ok = len(store.files) >= 200 and len(store.lines) >= 50_000 and max(rates.values()) <= 0.01
    corpus_ok = corpus_ok and len(phenomenon["pools"]) == 8 and len(results) == 8 * 9 * REPS
    parts.append(f"{len(store.files)} files, {len(store.lines)} lines, max base rate {max(rates.values()):.2%}, {len(results)} runs")

    by_cell = stats.aggregate_medians(results, "size_ratio", "precision", "balanced")
    rising = all(by_cell[f"S/{ratio}"] < by_cell[f"M/{ratio}"] for ratio in dataset.RATIOS)
    parts.append("balanced precision S->M " + ", ".join(f"{r} {by_cell[f'S/{r}']:.3f}->{by_cell[f'M/{r}']:.3f}" for r in dataset.RATIOS))
    bal = stats.aggregate_medians(results, "size", "precision", "balanced")["L"]
    real = stats.aggregate_medians(results, "size", "precision", "realistic")["L"]
    recall = stats.aggregate_medians(results, "size", "recall", "realistic")["L"]
    a_ok = rising and bal >= 0.9
    b_ok = real <= bal / 2 and recall >= 0.8
    parts.append(f"at L: balanced precision {bal:.3f}, realistic precision {real:.3f}, realistic recall {recall:.3f}")

    # (c) seed-for-seed: rerun a slice of the matrix from scratch
    sample_rules = ["eqeqeq", "quotes", "no-multi-spaces"]
    sample_configs = [dataset.LearningConfig.parse("S", "VF"), dataset.LearningConfig.parse("M", "VE"), dataset.LearningConfig.parse("L", "VFE")]
    pools = [phenomenon["pools"][r] for r in sample_rules]
    rerun = experiment.run_matrix(pools, view, index, sample_configs, REPS, MASTER_SEED, clf.LinearBackend())
    original = [r for r in results if r.rule in sample_rules and r.config in sample_configs]
    c_ok = rerun == original and len(rerun) == 3 * 3 * REPS
    parts.append(f"{len(rerun)} rerun results {'identical' if c_ok else 'DIFFER'}")
    parts.append(f"{phenomenon['seconds']:.0f}s")
    ok = corpus_ok and a_ok and b_ok and c_ok
    verdict(capsys, 6, "base-rate precision drop reproduced", ok, "; ".join(parts) + f" [corpus {corpus_ok}, a {a_ok}, b {b_ok}, c {c_ok}]")


def _pipeline(root: Path, src: Path, seed: int) -> Path:
    work = root / "work"
    steps = [
        ["ingest", "--manifest", src / "manifest.json", "--out", work],
        ["threshold", "--work", work, "--seed", seed],
        ["analyze", "--work", work],
        ["dataset", "--work", work, "--min-examples", 200],
        ["experiment", "--work", work, "--seed", seed, "--reps", 3, "--sizes", "S,M", "--epochs", 5, "--feature-dims", 16384],
        ["stats", "--work", work],
    ]
    for step in steps:
        code = cli_main([str(a) for a in step])
        assert code == 0, (step, code)
    return work


def test_criterion_7_end_to_end_determinism(capsys, tmp_path):
    src = tmp_path / "corpus"
    rates = {rule: 0.02 for rule in RULES}
    synth.generate_corpus(src, synth.SynthConfig(projects=20, files_per_project=15, lines_per_file=(40, 90), rates=rates, seed=77))
    first = _pipeline(tmp_path / "a", src, 9)
    second = _pipeline(tmp_path / "b", src, 9)
    files_a = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    differing = [str(rel) for rel in files_a if rel.name != "run_manifest.json" and (first / rel).read_bytes() != (second / rel).read_bytes()]
    ma = json.loads((first / "run_manifest.json").read_text())
    mb = json.loads((second / "run_manifest.json").read_text())
    for m in (ma, mb):
        m.pop("started_at")
        m.pop("finished_at")
    ok = files_a == files_b and not differing and ma == mb and (first / "report" / "summary.md").exists()
    detail = f"{len(files_a)} files compared, {len(differing)} differ" + (f": {differing}" if differing else "") + (", manifests equal" if ma == mb else ", MANIFESTS DIFFER")
    verdict(capsys, 7, "end-to-end determinism", ok, detail)


@pytest.mark.slow
def test_criterion_8_lint_smoke(capsys, phenomenon, tmp_path):
    pool = phenomenon["pools"]["eqeqeq"]
    config = dataset.LearningConfig.parse("M", "VFE")
    ts = dataset.sample_training_set(pool, config, random.Random(MASTER_SEED))
    model = clf.train(ts, clf.ClassifierConfig(seed=MASTER_SEED))
    model_path = tmp_path / "eqeqeq.json"
    clf.save_model(model, model_path)

    heldout = FIXTURES / "lint" / "heldout.js"
    lines = corpus.split_lines(heldout.read_text(encoding="utf-8"))
    planted = {i for i, line in enumerate(lines, 1) if check("eqeqeq", line)}
    compliant = {i for i, line in enumerate(lines, 1) if line.strip() and i not in planted}

    capsys.readouterr()
    code = cli_main(["lint", str(heldout), "--model", str(model_path), "--work", str(tmp_path)])
    out = capsys.readouterr().out.splitlines()
    flagged = {int(line.split(": [")[0].rsplit(":", 1)[1]) for line in out}
    missed = planted - flagged
    false_alarms = flagged & compliant
    fp_rate = len(false_alarms) / len(compliant)
    ok = code == 2 and not missed and fp_rate <= 0.05
    detail = f"trained on {len(ts.examples)} examples ({config.name}); {len(planted) - len(missed)}/{len(planted)} planted lines flagged, {len(false_alarms)}/{len(compliant)} compliant lines flagged ({fp_rate:.1%}), exit code {code}"
    verdict(capsys, 8, "lint smoke test", ok, detail)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
