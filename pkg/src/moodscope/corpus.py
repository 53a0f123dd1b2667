"""Labeled text corpora: loading, mixing, deduplication and splitting.

Loaders accept the two label conventions found in the wild for this task
(the "suicide"/"non-suicide" convention and plain 0/1) and normalise both
to a single binary label.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .timeutil import parse_iso8601_utc, to_iso_z


class CorpusError(Exception):
    """Bad corpus file: schema, row or label problems."""


class Label(str, Enum):
    DEPRESSIVE = "depressive"
    NON_DEPRESSIVE = "non_depressive"


class Source(str, Enum):
    KAGGLE = "kaggle"
    TWEETS = "tweets"
    HISTORY = "history"
    MANUAL = "manual"


_DEPRESSIVE_VALUES = {"depressive", "1", "suicide"}
_NON_DEPRESSIVE_VALUES = {"non-depressive", "non_depressive", "0", "non-suicide"}

_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class LabeledDocument:
    id: str
    text: str
    label: Optional[Label] = None
    timestamp: Optional[datetime] = None
    source: Source = Source.MANUAL


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 42
    stratified: bool = True

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if not all(0.0 < f < 1.0 for f in fracs):
            raise ValueError(f"split fractions must lie in (0,1): {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1: {fracs}")


def parse_label(value: str) -> Label:
    norm = value.strip().lower()
    if norm in _DEPRESSIVE_VALUES:
        return Label.DEPRESSIVE
    if norm in _NON_DEPRESSIVE_VALUES:
        return Label.NON_DEPRESSIVE
    raise CorpusError(f"unrecognised label value {value!r}")


def _parse_source(value: str) -> Source:
    try:
        return Source(value.strip().lower())
    except ValueError:
        raise CorpusError(f"unrecognised source value {value!r}") from None


def _make_doc(
    row_no: int,
    fname: str,
    text,
    label,
    doc_id=None,
    timestamp=None,
    source=None,
) -> LabeledDocument:
    if not isinstance(text, str) or not text.strip():
        raise CorpusError(f"row {row_no}: empty or missing text")
    parsed_label = None
    if label is not None and str(label).strip() != "":
        parsed_label = parse_label(str(label))
    parsed_ts = None
    if timestamp is not None and str(timestamp).strip() != "":
        try:
            parsed_ts = parse_iso8601_utc(str(timestamp))
        except ValueError as exc:
            raise CorpusError(f"row {row_no}: bad timestamp: {exc}") from None
    parsed_source = Source.MANUAL
    if source is not None and str(source).strip() != "":
        parsed_source = _parse_source(str(source))
    final_id = str(doc_id) if doc_id not in (None, "") else f"{fname}#{row_no}"
    return LabeledDocument(
        id=final_id,
        text=text,
        label=parsed_label,
        timestamp=parsed_ts,
        source=parsed_source,
    )


def load_corpus(path, format: str) -> list[LabeledDocument]:
    """Load a labeled corpus from a CSV (RFC 4180, header row) or JSONL file.

    CSV requires ``text`` and ``label`` columns; ``id``, ``timestamp`` and
    ``source`` are honoured when present.  JSONL requires a ``text`` key per
    line, everything else optional.  Missing ids are synthesised as
    ``<filename>#<row>``.  An empty file yields an empty list.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    if format == "csv":
        docs = _load_csv(path)
    elif format == "jsonl":
        docs = _load_jsonl(path)
    else:
        raise CorpusError(f"unknown corpus format {format!r}")
    _check_unique_ids(docs)
    return docs


def _load_csv(path: Path) -> list[LabeledDocument]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        for col in ("text", "label"):
            if col not in reader.fieldnames:
                raise CorpusError(f"{path.name}: missing required column {col!r}")
        docs = []
        for row_no, row in enumerate(reader, start=1):
            try:
                docs.append(
                    _make_doc(
                        row_no,
                        path.name,
                        row.get("text"),
                        row.get("label"),
                        doc_id=row.get("id"),
                        timestamp=row.get("timestamp"),
                        source=row.get("source"),
                    )
                )
            except CorpusError as exc:
                raise CorpusError(f"{path.name}: {exc}") from None
    return docs


def _load_jsonl(path: Path) -> list[LabeledDocument]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path.name}: line {line_no}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "text" not in obj:
                raise CorpusError(f"{path.name}: line {line_no}: missing required key 'text'")
            try:
                docs.append(
                    _make_doc(
                        line_no,
                        path.name,
                        obj.get("text"),
                        obj.get("label"),
                        doc_id=obj.get("id"),
                        timestamp=obj.get("timestamp"),
                        source=obj.get("source"),
                    )
                )
            except CorpusError as exc:
                raise CorpusError(f"{path.name}: {exc}") from None
    return docs


def save_jsonl(docs: Iterable[LabeledDocument], path) -> None:
    """Serialize documents to the JSONL interchange format (round-trip safe)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            obj = {"id": doc.id, "text": doc.text, "source": doc.source.value}
            if doc.label is not None:
                obj["label"] = doc.label.value
            if doc.timestamp is not None:
                obj["timestamp"] = to_iso_z(doc.timestamp)
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def _check_unique_ids(docs: Sequence[LabeledDocument]) -> None:
    seen = set()
    for doc in docs:
        if doc.id in seen:
            raise CorpusError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)


def _norm_text(text: str) -> str:
    return _WS_RE.sub(" ", text.strip())


def mix_corpora(
    a: Sequence[LabeledDocument], b: Sequence[LabeledDocument]
) -> list[LabeledDocument]:
    """Concatenate two corpora, dropping exact-duplicate texts.

    Duplicates are detected on whitespace-normalised text; the first
    occurrence wins.  Ids are re-uniquified with a source prefix so two
    corpora with overlapping ids can be mixed safely.
    """
    mixed: list[LabeledDocument] = []
    seen_texts: set[str] = set()
    used_ids: set[str] = set()
    for doc in list(a) + list(b):
        key = _norm_text(doc.text)
        if key in seen_texts:
            continue
        seen_texts.add(key)
        new_id = f"{doc.source.value}:{doc.id}"
        suffix = 2
        while new_id in used_ids:
            new_id = f"{doc.source.value}:{doc.id}~{suffix}"
            suffix += 1
        used_ids.add(new_id)
        mixed.append(replace(doc, id=new_id))
    return mixed


def split(
    corpus: Sequence[LabeledDocument], spec: SplitSpec
) -> tuple[list[LabeledDocument], list[LabeledDocument], list[LabeledDocument]]:
    """Deterministic train/val/test partition.

    Val and test sizes are floor-allocated; the remainder goes to train.
    In stratified mode the same allocation runs per class, which keeps each
    split's class counts within one item of the corpus ratio.
    """
    docs = list(corpus)
    if spec.stratified:
        if any(d.label is None for d in docs):
            raise CorpusError("stratified split requires every document to be labeled")
        train: list[LabeledDocument] = []
        val: list[LabeledDocument] = []
        test: list[LabeledDocument] = []
        for label in Label:
            group = [d for d in docs if d.label is label]
            t, v, s = _split_plain(group, spec)
            train += t
            val += v
            test += s
        return train, val, test
    return _split_plain(docs, spec)


def _split_plain(docs, spec: SplitSpec):
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(docs))
    n = len(docs)
    n_val = int(n * spec.val_frac)
    n_test = int(n * spec.test_frac)
    n_train = n - n_val - n_test
    shuffled = [docs[i] for i in order]
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )
