"""Tokenization, vocabularies and the character encodings used by mutation
and by the WAF simulator's decode chain."""

from __future__ import annotations

import html
import json
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence
from urllib.parse import unquote

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

# %XX escapes stay whole, alnum runs stay whole, everything else is one char.
_TOKEN_RE = re.compile(r"%[0-9A-Fa-f]{2}|[A-Za-z0-9_]+|\S")
# Lossless segmentation: like tokens, but whitespace runs and the inline
# comment `/**/` are kept as segments so payloads can be rebuilt exactly.
_SEGMENT_RE = re.compile(r"\s+|/\*\*/|%[0-9A-Fa-f]{2}|[A-Za-z0-9_]+|\S")
_WORD_RE = re.compile(r"[A-Za-z0-9_]+\Z")
_HEX2_RE = re.compile(r"[0-9A-Fa-f]{2}")


def tokenize(payload: str) -> list[str]:
    """Split a payload into word-level tokens.

    >>> tokenize("' OR '1'='1'")
    ["'", 'OR', "'", '1', "'", '=', "'", '1', "'"]
    """
    return _TOKEN_RE.findall(payload)


def segment(payload: str) -> list[str]:
    """Split a payload into segments whose concatenation is the payload."""
    return _SEGMENT_RE.findall(payload)


def is_word(token: str) -> bool:
    return bool(_WORD_RE.match(token))


def detokenize(tokens: Sequence[str]) -> str:
    """Join tokens into a payload that tokenizes back to ``tokens``.

    Whitespace is not recoverable from tokens, so a single space is placed
    only where two tokens would otherwise fuse on re-tokenization.
    """
    out: list[str] = []
    prev = None
    for tok in tokens:
        if prev is not None:
            if is_word(prev) and is_word(tok):
                out.append(" ")
            elif prev == "%" and _HEX2_RE.match(tok[:2]):
                out.append(" ")
        out.append(tok)
        prev = tok
    return "".join(out)


class Vocabulary:
    """Bijective token/index map with PAD, UNK, BOS, EOS fixed at 0..3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def tokens(self) -> list[str]:
        return self.itos[len(RESERVED):]

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_count: int = 1,
              max_size: int | None = None) -> "Vocabulary":
        """Frequency-ordered vocabulary; ties broken lexicographically."""
        counts = Counter(tok for seq in sequences for tok in seq)
        ranked = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED),
                        key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(RESERVED))]
        return cls(ranked)

    def to_json(self) -> str:
        return json.dumps({"format_version": 1, "tokens": self.tokens}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        data = json.loads(text)
        if data.get("format_version") != 1:
            raise ValueError(f"unsupported vocabulary format_version {data.get('format_version')!r}")
        return cls(data["tokens"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in indices]


def encode_tokens(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    return [vocab.stoi.get(t, UNK) for t in tokens]


def percent_encode(token: str) -> str:
    return "".join(f"%{b:02X}" for b in token.encode("utf-8"))


def html_entity_encode(token: str) -> str:
    return "".join(f"&#x{ord(c):X};" for c in token)


def case_scramble(token: str, rng) -> str:
    """Flip the case of each letter with probability 1/2."""
    flips = rng.random(len(token)) < 0.5
    return "".join(c.swapcase() if f and c.isalpha() else c for c, f in zip(token, flips))


def decode_chain(payload: str, max_iterations: int = 4) -> str:
    """Canonical form: percent- and entity-decode to a fixpoint, then lowercase."""
    text = payload
    for _ in range(max_iterations):
        decoded = html.unescape(unquote(text))
        if decoded == text:
            break
        text = decoded
    return text.lower()
