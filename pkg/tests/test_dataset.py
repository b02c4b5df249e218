from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlinter import corpus, dataset
from mlinter.corpus import CorpusStore, FileRecord, SourceLine
from mlinter.dataset import (
    COMPLIANT,
    EXTANT,
    FIXED,
    NON_COMPLIANT,
    VIOLATION,
    DatasetError,
    Example,
    ExamplePool,
    LearningConfig,
    build_pools,
    sample_training_set,
)
from mlinter.oracle import check


def test_config_counts():
    assert LearningConfig.parse("S", "VFE").counts() == {VIOLATION: 5, FIXED: 3, EXTANT: 2}
    assert LearningConfig.parse("M", "VF").counts() == {VIOLATION: 50, FIXED: 50, EXTANT: 0}
    assert LearningConfig.parse("M", "VE").counts() == {VIOLATION: 50, FIXED: 0, EXTANT: 50}
    assert LearningConfig.parse("L", "VFE").counts() == {VIOLATION: 500, FIXED: 250, EXTANT: 250}


@given(st.integers(2, 5000), st.sampled_from(dataset.RATIOS))
def test_config_count_invariants(size, ratio):
    counts = LearningConfig(size, ratio).counts()
    assert sum(counts.values()) == size
    assert counts[VIOLATION] == -(-size // 2)
    if ratio == "VFE":
        assert counts[FIXED] >= counts[EXTANT]


def test_config_validation_and_names():
    with pytest.raises(ValueError):
        LearningConfig(10, "XY")
    with pytest.raises(ValueError):
        LearningConfig(1, "VF")
    assert LearningConfig.parse("250", "VE").name == "250/VE"
    assert LearningConfig.parse("L", "VF").name == "L/VF"
    assert len(dataset.all_configs()) == 9


def test_example_labels_and_json():
    v = Example("a == b", VIOLATION, 3, 7)
    f = Example("a === b", FIXED, 3, 7)
    e = Example("x = 1;", EXTANT, 1, 2)
    assert (v.label, f.label, e.label) == (NON_COMPLIANT, COMPLIANT, COMPLIANT)
    assert f.to_json()["origin"] == {"fixed_from": {"file_id": 3, "line_no": 7}}
    assert e.to_json()["origin"] == {"file_id": 1, "line_no": 2}
    for ex in (v, f, e):
        assert Example.from_json(ex.to_json()) == ex


def toy_pool(n=20):
    return ExamplePool(
        "eqeqeq",
        [Example(f"a{i} == b", VIOLATION, 0, i) for i in range(n)],
        [Example(f"a{i} === b", FIXED, 0, i) for i in range(n)],
        [Example(f"x{i} = 1;", EXTANT, 1, i) for i in range(n)],
    )


@pytest.mark.parametrize("config", dataset.all_configs(), ids=lambda c: c.name)
def test_sample_composition(config):
    ts = sample_training_set(toy_pool(), config, random.Random(1))
    assert len(ts.examples) == config.size
    for kind, n in config.counts().items():
        assert sum(ex.kind == kind for ex in ts.examples) == n
    assert sum(ts.labels()) * 2 == config.size


def test_sample_with_replacement_repeats():
    ts = sample_training_set(toy_pool(5), LearningConfig.parse("L", "VF"), random.Random(0))
    assert len(ts.drawn_instances) <= 5


def test_sample_deterministic():
    pool = toy_pool()
    a = sample_training_set(pool, LearningConfig.parse("M", "VFE"), random.Random(42))
    b = sample_training_set(pool, LearningConfig.parse("M", "VFE"), random.Random(42))
    assert a == b


def test_sample_empty_category():
    pool = toy_pool()
    pool.extant.clear()
    with pytest.raises(DatasetError):
        sample_training_set(pool, LearningConfig.parse("S", "VE"), random.Random(0))
    sample_training_set(pool, LearningConfig.parse("S", "VF"), random.Random(0))


def make_view(texts):
    files = [FileRecord(0, "p", "a.js", None, len(texts))]
    store = CorpusStore(files, [SourceLine(0, i, t) for i, t in enumerate(texts, 1)])
    return corpus.filter_lines(store, 200)


def test_build_pools_planted():
    texts = [f"if (a{i} == b) {{" for i in range(10)] + ["x = 1;", "var y = 2;", ""]
    view = make_view(texts)
    index = corpus.analyze(view, ["eqeqeq", "no-var"])
    [pool] = build_pools(index, view, ["eqeqeq", "no-var"], min_examples=10)
    assert pool.rule == "eqeqeq"
    assert len(pool.violations) == len(pool.fixed) == 10
    assert [ex.text for ex in pool.extant] == ["x = 1;", "var y = 2;", ""]
    assert all(check("eqeqeq", ex.text) == [] for ex in pool.fixed + pool.extant)


def test_build_pools_exclusion(caplog):
    view = make_view(["a == b"] * 3 + ["x;"])
    index = corpus.analyze(view, ["eqeqeq", "no-var"])
    with pytest.raises(DatasetError):
        build_pools(index, view, ["eqeqeq", "no-var"], min_examples=4)
    pools = build_pools(index, view, ["eqeqeq", "no-var"], min_examples=3)
    assert [p.rule for p in pools] == ["eqeqeq"]
    assert "excluding no-var" in caplog.text


def test_label_oracle_agreement(small_pipeline):
    _, view, _, pools = small_pipeline
    rng = random.Random(5)
    for rule, pool in pools.items():
        assert len(pool.violations) == len(pool.fixed)
        for config in dataset.all_configs(sizes=("S", "M")):
            ts = sample_training_set(pool, config, rng)
            for ex in ts.examples:
                assert (ex.label == NON_COMPLIANT) == bool(check(rule, ex.text)), (rule, ex)
                assert len(ex.text) <= view.max_len


def test_pool_round_trip(tmp_path):
    pool = toy_pool(4)
    dataset.write_pool(pool, tmp_path / "p.jsonl")
    shared: dict = {}
    again = dataset.read_pool("eqeqeq", tmp_path / "p.jsonl", shared)
    assert again == pool
    other = dataset.read_pool("eqeqeq", tmp_path / "p.jsonl", shared)
    assert other.extant[0] is again.extant[0]
