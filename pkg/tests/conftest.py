from __future__ import annotations

import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mlinter import corpus, dataset, synth  # noqa: E402
from mlinter.oracle import RULES  # noqa: E402

SMALL_RATES = {rule: 0.03 for rule in RULES}


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory) -> Path:
    """About 500 violations per rule over ~18k lines in 300 files."""
    out = tmp_path_factory.mktemp("small-corpus")
    synth.generate_corpus(out, synth.SynthConfig(projects=20, files_per_project=15, lines_per_file=(40, 80), rates=SMALL_RATES, seed=7))
    return out


@pytest.fixture(scope="session")
def small_pipeline(small_corpus_dir):
    store = corpus.ingest([], corpus.load_manifest(small_corpus_dir / "manifest.json"))
    threshold = corpus.compute_length_threshold(store, 385, 0.99, random.Random(0))
    view = corpus.filter_lines(store, threshold)
    index = corpus.analyze(view, RULES)
    pools = dataset.build_pools(index, view, RULES, min_examples=50)
    return store, view, index, {p.rule: p for p in pools}
