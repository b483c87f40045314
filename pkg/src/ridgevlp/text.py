"""Word-level vocabulary and tokenizer."""
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, ParseError

PAD, START, MASK, UNK = 0, 1, 2, 3
RESERVED = ("[PAD]", "[START]", "[MASK]", "[UNK]")
DEFAULT_MAX_LEN = 64

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(tokenize(text))


class Vocabulary:
    def __init__(self, tokens: Iterable[str]):
        self.itos = list(RESERVED) + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigurationError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def to_lines(self) -> str:
        return "".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos))

    def save(self, path) -> None:
        Path(path).write_text(self.to_lines(), encoding="utf-8")

    @classmethod
    def from_lines(cls, text: str) -> "Vocabulary":
        pairs = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            try:
                tok, idx = line.rsplit("\t", 1)
                pairs.append((int(idx), tok))
            except ValueError:
                raise ParseError(f"bad vocabulary line {n}: {line!r}") from None
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))) or \
                tuple(t for _, t in pairs[:len(RESERVED)]) != RESERVED:
            raise ParseError("vocabulary ids must be dense and start with the reserved tokens")
        return cls(t for _, t in pairs[len(RESERVED):])

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_lines(Path(path).read_text(encoding="utf-8"))


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    counts = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        counts.update(tokenize(doc))
    if n_docs == 0:
        raise ConfigurationError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    maskable: np.ndarray

    def __len__(self):
        return len(self.ids)

    @property
    def length(self) -> int:
        """Number of non-PAD positions."""
        return int(np.count_nonzero(self.ids != PAD))


def encode(text: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    if max_len < 2:
        raise ConfigurationError(f"max_len must be at least 2, got {max_len}")
    body = [vocab.id(t) for t in tokenize(text)][: max_len - 1]
    ids = np.full(max_len, PAD, dtype=np.int64)
    ids[0] = START
    ids[1:1 + len(body)] = body
    return TokenSequence(ids, ids > UNK)


def decode(ids, vocab: Vocabulary) -> str:
    return " ".join(vocab.itos[int(i)] for i in ids if int(i) not in (PAD, START))
