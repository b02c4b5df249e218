"""Per-practice line classifiers.

The built-in backend is a logistic regression over hashed token n-grams,
trained by SGD. Any object with the :class:`Backend` methods can replace it in
the experiment harness.

Features
    Whitespace and comments are dropped. Each remaining token contributes its
    ``kind:text`` pair (strings carry their quote style in the kind, e.g.
    ``String.single``). N-grams of these pairs are taken for every order in
    ``token_ngram_orders`` over the sequence padded with ``<s>`` / ``</s>``
    line markers, plus the same n-grams over kinds alone. N-grams made only
    of markers are skipped. Each n-gram string is hashed with 64-bit BLAKE2b
    (little-endian) modulo ``feature_dims``; values are term counts.

Objective
    ``mean(log(1 + exp(-s * z))) + l2 / 2 * ||w||^2`` with ``z = w.x + b``
    and ``s = +1`` for non-compliant lines; the bias is not regularized.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import os
import random
from dataclasses import asdict, dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from mlinter.dataset import COMPLIANT, NON_COMPLIANT, TrainingSet
from mlinter.lexer import significant, tokenize

MODEL_FORMAT = "mlinter-linear"
MODEL_VERSION = 1

BOS, EOS = "<s>", "</s>"


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    feature_dims: int = 2**18
    token_ngram_orders: tuple[int, ...] = (1, 2, 3)
    include_kind_ngrams: bool = True
    epochs: int = 10
    learning_rate: float = 0.1
    l2: float = 1e-4
    decision_threshold: float = 0.5
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.feature_dims < 2 or self.feature_dims & (self.feature_dims - 1):
            raise ValueError(f"feature_dims must be a power of two >= 2, got {self.feature_dims}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.decision_threshold < 1:
            raise ValueError("decision_threshold must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.token_ngram_orders or min(self.token_ngram_orders) < 1:
            raise ValueError("token_ngram_orders must be positive integers")
        object.__setattr__(self, "token_ngram_orders", tuple(self.token_ngram_orders))

    @classmethod
    def from_json(cls, d: dict) -> ClassifierConfig:
        d = dict(d)
        d["token_ngram_orders"] = tuple(d.get("token_ngram_orders", (1, 2, 3)))
        return cls(**d)


# -- features ------------------------------------------------------------------


@functools.lru_cache(maxsize=1 << 20)
def _bucket(feature: str, dims: int) -> int:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dims


def feature_strings(line: str, config: ClassifierConfig) -> list[str]:
    """The un-hashed n-gram features of a line, in emission order."""
    tokens = significant(tokenize(line))
    if not tokens:
        return []
    streams = [("t", [BOS] + [f"{t.label}:{t.text}" for t in tokens] + [EOS])]
    if config.include_kind_ngrams:
        streams.append(("k", [BOS] + [t.label for t in tokens] + [EOS]))
    out = []
    for tag, seq in streams:
        for n in config.token_ngram_orders:
            for i in range(len(seq) - n + 1):
                gram = seq[i : i + n]
                if all(g in (BOS, EOS) for g in gram):
                    continue
                out.append(f"{tag}{n}|" + "\x1f".join(gram))
    return out


def featurize(line: str, config: ClassifierConfig) -> dict[int, float]:
    """Sparse hashed term-frequency vector of a line."""
    vec: dict[int, float] = {}
    for feature in feature_strings(line, config):
        idx = _bucket(feature, config.feature_dims)
        vec[idx] = vec.get(idx, 0.0) + 1.0
    return vec


def _as_arrays(vec: dict[int, float]) -> tuple[np.ndarray, np.ndarray]:
    idx = np.fromiter(vec.keys(), dtype=np.int64, count=len(vec))
    vals = np.fromiter(vec.values(), dtype=np.float64, count=len(vec))
    return idx, vals


class FeatureCache:
    """Memoized featurization, keyed by line text."""

    def __init__(self, config: ClassifierConfig):
        self.config = config
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, line: str) -> tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(line)
        if hit is None:
            hit = self._cache[line] = _as_arrays(featurize(line, self.config))
        return hit


# -- model ---------------------------------------------------------------------


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class Prediction:
    label: str
    score: float

    @property
    def non_compliant(self) -> bool:
        return self.label == NON_COMPLIANT


@dataclass
class TrainedClassifier:
    rule: str
    weights: np.ndarray
    bias: float
    config: ClassifierConfig
    loss_trace: list[float] = field(default_factory=list, compare=False)

    def margin(self, features: tuple[np.ndarray, np.ndarray]) -> float:
        idx, vals = features
        return float(self.weights[idx] @ vals) + self.bias

    def score_features(self, features: tuple[np.ndarray, np.ndarray]) -> float:
        return _sigmoid(self.margin(features))

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "rule": self.rule,
            "config": asdict(self.config),
            "bias": self.bias,
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> TrainedClassifier:
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model format {d.get('format')!r} v{d.get('version')!r}")
        config = ClassifierConfig.from_json(d["config"])
        weights = np.asarray(d["weights"], dtype=np.float64)
        if weights.shape != (config.feature_dims,) or not np.all(np.isfinite(weights)):
            raise ValueError("model weights do not match feature_dims or are not finite")
        return cls(d["rule"], weights, float(d["bias"]), config)


def save_model(model: TrainedClassifier, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as out:
        json.dump(model.to_json(), out, separators=(",", ":"))
        out.write("\n")


def load_model(path: str | os.PathLike) -> TrainedClassifier:
    with open(path, encoding="utf-8") as fh:
        return TrainedClassifier.from_json(json.load(fh))


def predict(model: TrainedClassifier, line: str) -> Prediction:
    score = model.score_features(_as_arrays(featurize(line, model.config)))
    label = NON_COMPLIANT if score >= model.config.decision_threshold else COMPLIANT
    return Prediction(label, score)


# -- training ------------------------------------------------------------------


def objective(
    weights: np.ndarray,
    bias: float,
    data: Sequence[tuple[np.ndarray, np.ndarray]],
    labels: Sequence[int],
    l2: float,
) -> tuple[float, np.ndarray, float]:
    """Regularized mean logistic loss with its gradient (w.r.t. weights, bias)."""
    grad = l2 * weights
    grad_b = 0.0
    loss = 0.0
    n = len(data)
    for (idx, vals), y in zip(data, labels):
        z = float(weights[idx] @ vals) + bias
        # log(1 + exp(-s z)) computed without overflow
        sz = z if y else -z
        loss += math.log1p(math.exp(-sz)) if sz > 0 else -sz + math.log1p(math.exp(sz))
        g = (_sigmoid(z) - y) / n
        grad[idx] += g * vals  # indices within one vector are unique
        grad_b += g
    loss = loss / n + 0.5 * l2 * float(weights @ weights)
    return loss, grad, grad_b


def train_arrays(
    data: Sequence[tuple[np.ndarray, np.ndarray]],
    labels: Sequence[int],
    config: ClassifierConfig,
    rule: str = "",
) -> TrainedClassifier:
    """Mini-batch SGD (batch size 1 by default) on pre-featurized examples.

    Weights are kept as ``scale * v`` so the L2 shrink costs O(1) per step.
    The loss trace holds the full objective after each epoch.
    """
    labels = list(labels)
    if not data:
        raise TrainingError("cannot train on an empty training set")
    if len(set(labels)) < 2:
        raise TrainingError("training set must contain both compliant and non-compliant examples")
    rng = random.Random(config.seed)
    v = np.zeros(config.feature_dims)
    scale = 1.0
    bias = 0.0
    lr, l2 = config.learning_rate, config.l2
    order = list(range(len(data)))
    trace = []
    for _ in range(config.epochs):
        rng.shuffle(order)
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            coefs = []
            for i in batch:
                idx, vals = data[i]
                z = scale * float(v[idx] @ vals) + bias
                coefs.append(lr * (_sigmoid(z) - labels[i]) / len(batch))
            scale *= 1.0 - lr * l2
            for i, c in zip(batch, coefs):
                idx, vals = data[i]
                v[idx] -= (c / scale) * vals
                bias -= c
            if scale < 1e-6:
                v *= scale
                scale = 1.0
        trace.append(objective(scale * v, bias, data, labels, l2)[0])
    weights = scale * v
    if not np.all(np.isfinite(weights)) or not math.isfinite(bias):
        raise TrainingError("training diverged")
    return TrainedClassifier(rule, weights, bias, config, trace)


def train(ts: TrainingSet, config: ClassifierConfig, cache: FeatureCache | None = None) -> TrainedClassifier:
    """Fit a classifier for the training set's rule; deterministic in ``config.seed``."""
    cache = cache or FeatureCache(config)
    data = [cache(text) for text in ts.texts()]
    return train_arrays(data, ts.labels(), config, ts.rule)


# -- backends ------------------------------------------------------------------


class Backend(Protocol):
    """What the experiment harness needs from a classifier implementation."""

    name: str

    def train(self, ts: TrainingSet, seed: int): ...

    def predict(self, model, texts: Sequence[str]) -> list[bool]:
        """True where a line is predicted non-compliant."""
        ...


class LinearBackend:
    name = "linear"

    def __init__(self, config: ClassifierConfig | None = None):
        self.config = config or ClassifierConfig()
        self.features = FeatureCache(self.config)

    def train(self, ts: TrainingSet, seed: int) -> TrainedClassifier:
        config = replace(self.config, seed=seed)
        data = [self.features(t) for t in ts.texts()]
        return train_arrays(data, ts.labels(), config, ts.rule)

    def predict(self, model: TrainedClassifier, texts: Sequence[str]) -> list[bool]:
        threshold = model.config.decision_threshold
        return [model.score_features(self.features(t)) >= threshold for t in texts]


class AlwaysNonCompliantBackend:
    """Flags every line; a trivial stand-in for harness tests."""

    name = "always-non-compliant"

    def train(self, ts: TrainingSet, seed: int) -> None:
        return None

    def predict(self, model, texts: Sequence[str]) -> list[bool]:
        return [True] * len(texts)
