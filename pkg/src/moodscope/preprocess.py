"""Text cleaning and the classical TF-IDF + logistic-regression baseline.

The cleaning rules target social-media text: URLs, hashtags and mentions
are dropped whole, punctuation becomes a token boundary, intra-word
apostrophes survive so contractions stay matchable against the stop list.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .porter import stem  # noqa: F401  (re-exported: stemming lives with cleaning)

_URL_RE = re.compile(r"[a-z][a-z0-9+.\-]*://\S*")
_WWW_RE = re.compile(r"(?<![\w.])www\.\S+")
_TAG_RE = re.compile(r"(?<!\S)[#@]\S+")
_PUNCT_RE = re.compile(r"[^\w\s']|_")
_LONE_APOS_RE = re.compile(r"(?<!\w)'|'(?!\w)")
_WS_RE = re.compile(r"\s+")


def clean_text(raw: str) -> str:
    """Lowercase and strip URLs, hashtags, mentions and punctuation.

    Idempotent; total over any unicode string.
    """
    s = raw.lower()
    s = _URL_RE.sub(" ", s)
    s = _WWW_RE.sub(" ", s)
    s = _TAG_RE.sub(" ", s)
    s = _PUNCT_RE.sub(" ", s)
    s = _LONE_APOS_RE.sub("", s)
    return _WS_RE.sub(" ", s).strip()


def tokenize_basic(text: str) -> list[str]:
    """Split on unicode whitespace, order preserved."""
    return text.split()


@dataclass(frozen=True)
class StopList:
    words: frozenset[str]

    def __post_init__(self):
        for w in self.words:
            if w != w.lower() or any(c.isspace() for c in w):
                raise ValueError(f"stop list entry {w!r} must be lowercase, no whitespace")

    @classmethod
    def from_file(cls, path) -> "StopList":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(frozenset(w.strip() for w in lines if w.strip()))


def default_stoplist() -> StopList:
    """The 175-word English list shipped with the package."""
    text = resources.files("moodscope.data").joinpath("stopwords.txt").read_text("utf-8")
    return StopList(frozenset(w.strip() for w in text.splitlines() if w.strip()))


def remove_stopwords(tokens: list[str], stops: StopList) -> list[str]:
    return [t for t in tokens if t.lower() not in stops.words]


@dataclass(frozen=True)
class TfidfModel:
    vocabulary: dict[str, int]
    idf: np.ndarray
    n_docs: int

    def to_json(self) -> str:
        return json.dumps(
            {"vocabulary": self.vocabulary, "idf": self.idf.tolist(), "n_docs": self.n_docs}
        )

    @classmethod
    def from_json(cls, text: str) -> "TfidfModel":
        obj = json.loads(text)
        return cls(
            vocabulary=obj["vocabulary"],
            idf=np.asarray(obj["idf"], dtype=np.float64),
            n_docs=obj["n_docs"],
        )


def tfidf_fit(corpus: list[list[str]]) -> TfidfModel:
    """Fit vocabulary and smoothed idf: idf(t) = ln((1+N)/(1+df(t))) + 1."""
    if not corpus:
        raise ValueError("tfidf_fit: corpus is empty")
    terms = sorted({t for doc in corpus for t in doc})
    vocabulary = {t: i for i, t in enumerate(terms)}
    df = np.zeros(len(terms), dtype=np.int64)
    for doc in corpus:
        for t in set(doc):
            df[vocabulary[t]] += 1
    n = len(corpus)
    idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
    return TfidfModel(vocabulary=vocabulary, idf=idf, n_docs=n)


def tfidf_transform(model: TfidfModel, doc: list[str]) -> np.ndarray:
    """Raw counts weighted by idf, then L2-normalised; unseen terms ignored."""
    vec = np.zeros(len(model.vocabulary), dtype=np.float64)
    for t in doc:
        idx = model.vocabulary.get(t)
        if idx is not None:
            vec[idx] += 1.0
    vec *= model.idf
    norm = math.sqrt(float(vec @ vec))
    if norm > 0.0:
        vec /= norm
    return vec


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise ValueError("linear model has non-finite parameters")

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(features) @ self.weights + self.bias
        return _sigmoid(z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def baseline_loss(weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy of the logistic model, log-sum-exp stable."""
    z = X @ weights + bias
    # -[y*log(p) + (1-y)*log(1-p)] = log(1+exp(z)) - y*z, stabilised
    per = np.logaddexp(0.0, z) - y * z
    return float(np.mean(per))


def baseline_gradient(
    weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, float]:
    p = _sigmoid(X @ weights + bias)
    err = p - y
    return X.T @ err / len(y), float(np.mean(err))


def train_baseline(
    features: list[np.ndarray], labels: list[int], epochs: int, lr: float
) -> LinearModel:
    """Full-batch gradient descent from zero initialisation (deterministic)."""
    if len(features) != len(labels) or len(features) < 2:
        raise ValueError("need matching features/labels with at least 2 samples")
    y = np.asarray(labels, dtype=np.float64)
    if len(set(labels)) < 2:
        raise ValueError("training data contains a single class")
    X = np.vstack([np.asarray(f, dtype=np.float64) for f in features])
    w = np.zeros(X.shape[1], dtype=np.float64)
    b = 0.0
    for _ in range(epochs):
        gw, gb = baseline_gradient(w, b, X, y)
        w -= lr * gw
        b -= lr * gb
    return LinearModel(weights=w, bias=b)
