"""Playlist title tokenization."""

from __future__ import annotations

import re
from functools import lru_cache

from nltk.stem import LancasterStemmer, PorterStemmer

_UNCOMMON = re.compile(r"[^a-z0-9\s]")
_RUNS = re.compile(r"[a-z]+|[0-9]+")
_porter = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)
_lancaster = LancasterStemmer()


@lru_cache(maxsize=65536)
def stems(word: str) -> tuple[str, str]:
    """Porter and Lancaster stems of an alphabetic token."""
    return _porter.stem(word), _lancaster.stem(word)


def normalize_title(title: str | None) -> str:
    """Lowercased title stripped of uncommon characters and extra spaces."""
    if not title:
        return ""
    text = _UNCOMMON.sub("", title.lower())
    return " ".join(text.split())


def tokenize_title(title: str | None, stem: bool = True) -> list[str]:
    """
    Tokens for a playlist title: the surviving words, the letter and digit
    runs of mixed words, then Porter and Lancaster stems of every alphabetic
    token. Lowercased, first occurrence kept.

    >>> tokenize_title("r o c k")
    ['rock']
    >>> tokenize_title("Summer2017")
    ['summer2017', 'summer', '2017', 'sum']
    """
    if not title:
        return []
    # single-letter check runs on cleaned words so "r. o. c. k." joins too
    words = _UNCOMMON.sub("", title.lower()).split()
    if len(words) > 1 and all(len(w) == 1 and w.isalpha() for w in words):
        words = ["".join(words)]

    split = []
    for w in words:
        if not (w.isalpha() or w.isdigit()):
            split.extend(_RUNS.findall(w))
    stemmed = []
    for w in words + split:
        if stem and w.isalpha():
            stemmed.extend(stems(w))

    seen = {}
    for tok in words + split + stemmed:
        if tok:
            seen.setdefault(tok, None)
    return list(seen)
