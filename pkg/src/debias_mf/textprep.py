"""Tokenization, frequency-capped vocabularies, fixed-length id sequences."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = [
    "PAD_ID",
    "UNK_ID",
    "Vocabulary",
    "Corpus",
    "tokenize",
    "build_vocabulary",
    "encode",
    "encode_corpus",
    "load_documents",
    "save_vocabulary",
    "load_vocabulary",
]

PAD_ID = 0
UNK_ID = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list:
    """Lowercase and split on non-alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Token-to-id map with reserved pad (0) and unknown (1) ids."""

    token_to_id: dict
    max_size: int

    def __len__(self) -> int:
        return len(self.token_to_id) + 2

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


@dataclass(frozen=True)
class Corpus:
    """Fixed-length token-id sequences, one row per item."""

    sequences: np.ndarray
    length: int
    vocab_size: int

    def __post_init__(self):
        seqs = np.ascontiguousarray(np.asarray(self.sequences, dtype=np.int64))
        seqs.setflags(write=False)
        object.__setattr__(self, "sequences", seqs)
        if seqs.ndim != 2 or seqs.shape[1] != self.length:
            raise ValueError(f"sequences must be (n, {self.length})")
        if len(seqs) and (seqs.min() < 0 or seqs.max() >= self.vocab_size):
            raise ValueError("token id out of vocabulary range")

    @property
    def num_items(self) -> int:
        return len(self.sequences)


def build_vocabulary(documents, max_size: int) -> Vocabulary:
    """Top ``max_size`` tokens by corpus frequency, ties broken lexicographically."""
    counts = Counter()
    for doc in documents:
        counts.update(tokenize(doc))
    if not counts:
        raise DataError("cannot build a vocabulary: all documents are empty")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_size]
    token_to_id = {tok: i + 2 for i, (tok, _) in enumerate(ranked)}
    return Vocabulary(token_to_id=token_to_id, max_size=max_size)


def encode(document: str, vocab: Vocabulary, length: int) -> np.ndarray:
    """Token ids truncated or right-padded to exactly ``length`` entries."""
    if length < 1:
        raise ValueError("length must be >= 1")
    ids = [vocab.id_of(tok) for tok in tokenize(document)[:length]]
    out = np.full(length, PAD_ID, dtype=np.int64)
    out[:len(ids)] = ids
    return out


def encode_corpus(documents, vocab: Vocabulary, length: int) -> Corpus:
    """Encode one document per item into a Corpus."""
    seqs = np.stack([encode(doc, vocab, length) for doc in documents]) if documents \
        else np.zeros((0, length), dtype=np.int64)
    return Corpus(sequences=seqs, length=length, vocab_size=len(vocab))


def load_documents(path) -> dict:
    """Read ``raw_item_id<TAB>text`` lines into an id -> text map."""
    docs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError(f"{path}: line {lineno}: expected 'item_id<TAB>text'")
            raw_id, text = line.split("\t", 1)
            try:
                docs[int(raw_id)] = text
            except ValueError:
                raise DataError(f"{path}: line {lineno}: not an item id: {raw_id!r}")
    if not docs:
        raise DataError(f"{path}: no documents found")
    return docs


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """Two-column text file: token, id."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"<pad>\t{PAD_ID}\n<unk>\t{UNK_ID}\n")
        for tok, idx in sorted(vocab.token_to_id.items(), key=lambda kv: kv[1]):
            fh.write(f"{tok}\t{idx}\n")


def load_vocabulary(path) -> Vocabulary:
    token_to_id = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}: line {lineno}: expected 'token<TAB>id'")
            tok, idx = parts[0], int(parts[1])
            if tok in ("<pad>", "<unk>"):
                continue
            token_to_id[tok] = idx
    return Vocabulary(token_to_id=token_to_id, max_size=max(len(token_to_id), 0))
