"""WordPiece tokenizer and fixed-length sequence encoding.

Lowercasing/cleaning is the caller's job (see preprocess.clean_text); this
module only segments already-clean words and packs them into padded,
masked id sequences.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN)

# Words longer than this are mapped straight to [UNK].
MAX_WORD_CHARS = 100

DEFAULT_MAX_LEN = 64


class VocabError(Exception):
    """Malformed vocabulary file."""


@dataclass(frozen=True)
class Vocab:
    token_to_id: dict[str, int]

    def __post_init__(self):
        for special in SPECIAL_TOKENS:
            if special not in self.token_to_id:
                raise VocabError(f"vocabulary is missing special token {special}")
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise VocabError("vocabulary ids must be dense 0..V-1")

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id[token]

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK_TOKEN]

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS_TOKEN]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP_TOKEN]

    def tokens_in_order(self) -> list[str]:
        return sorted(self.token_to_id, key=self.token_to_id.get)


@dataclass(frozen=True)
class TokenSequence:
    ids: list[int]
    attention_mask: list[int]
    segment_ids: list[int]

    def __post_init__(self):
        if not (len(self.ids) == len(self.attention_mask) == len(self.segment_ids)):
            raise ValueError("ids, attention_mask and segment_ids must be equal length")

    @property
    def n_tokens(self) -> int:
        return sum(self.attention_mask)


def load_vocab(path) -> Vocab:
    """Read a one-token-per-line vocabulary; line number = token id."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    token_to_id: dict[str, int] = {}
    for i, line in enumerate(lines):
        token = line.strip()
        if not token:
            raise VocabError(f"{path}: blank token at line {i + 1}")
        if token in token_to_id:
            raise VocabError(
                f"{path}: duplicate token {token!r} at lines "
                f"{token_to_id[token] + 1} and {i + 1}"
            )
        token_to_id[token] = i
    return Vocab(token_to_id)


def save_vocab(vocab: Vocab, path) -> None:
    Path(path).write_text("\n".join(vocab.tokens_in_order()) + "\n", encoding="utf-8")


def wordpiece(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first segmentation with '##' continuations.

    If any position cannot be matched the whole word becomes [UNK].
    """
    if not word or len(word) > MAX_WORD_CHARS:
        return [UNK_TOKEN]
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        match: Optional[str] = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = "##" + piece
            if piece in vocab:
                match = piece
                break
            end -= 1
        if match is None:
            return [UNK_TOKEN]
        pieces.append(match)
        start = end
    return pieces


def encode(text: str, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    """[CLS] + pieces + [SEP], truncated to max_len and padded with [PAD]."""
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    pieces: list[str] = []
    for word in text.split():
        pieces.extend(wordpiece(word, vocab))
    pieces = pieces[: max_len - 2]
    tokens = [CLS_TOKEN] + pieces + [SEP_TOKEN]
    ids = [vocab.id(t) for t in tokens]
    n = len(ids)
    ids += [vocab.pad_id] * (max_len - n)
    mask = [1] * n + [0] * (max_len - n)
    return TokenSequence(ids=ids, attention_mask=mask, segment_ids=[0] * max_len)


def build_word_vocab(texts: Iterable[str], max_size: Optional[int] = None) -> Vocab:
    """Whole-word vocabulary from cleaned texts: specials + words by frequency.

    A convenience for training on small corpora; it performs no subword
    learning, so unseen words encode as [UNK].
    """
    counts = Counter(w for t in texts for w in t.split())
    ordered = sorted(counts, key=lambda w: (-counts[w], w))
    if max_size is not None:
        if max_size < len(SPECIAL_TOKENS):
            raise ValueError("max_size smaller than the special-token set")
        ordered = ordered[: max_size - len(SPECIAL_TOKENS)]
    tokens = list(SPECIAL_TOKENS) + [w for w in ordered if w not in SPECIAL_TOKENS]
    return Vocab({t: i for i, t in enumerate(tokens)})
