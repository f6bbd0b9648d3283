"""Word-level tokenizer for the built-in tiny backend.

Splits on whitespace and punctuation: a token is either a run of word
characters or a single non-space symbol.  Out-of-vocabulary words map to the
reserved ``<unk>`` token.  Documented normalization for round trips:
``detokenize(tokenize(s))`` reproduces ``s`` up to (a) single spaces between
all tokens, including punctuation, and (b) unknown words becoming ``<unk>``.
"""

from __future__ import annotations

import re

UNK = "<unk>"
BOS = "<bos>"
RESERVED = (UNK, BOS)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Surface word/punctuation split used for both ids and surface-token sets."""
    return _TOKEN_RE.findall(text)


class WordTokenizer:
    """Fixed-vocabulary word tokenizer with an unknown-token fallback."""

    def __init__(self, words):
        words = list(words)
        if len(set(words)) != len(words):
            raise ValueError("vocabulary contains duplicate words")
        if any(w in RESERVED for w in words):
            raise ValueError(f"vocabulary must not contain reserved tokens {RESERVED}")
        self.tokens = list(RESERVED) + words
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self._ids.get(w, unk) for w in split_words(text)]

    def decode(self, ids) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]


def vocab_from_texts(texts) -> list[str]:
    """Sorted unique word list over the given texts (deterministic)."""
    seen = set()
    for text in texts:
        seen.update(split_words(text))
    return sorted(seen)
