"""Word tokenisation, stable bucket hashing and the count parser oracle."""
from __future__ import annotations

import re
import zlib

MAX_TOKENS = 64
NUMBER_WORDS = {"no": 0, "zero": 0, "a": 1, "an": 1, "one": 1, "single": 1, "two": 2, "three": 3, "four": 4,
                "five": 5, "six": 6}
COUNT_WORDS = {0: "no", 1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six"}

_WORD = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase words with punctuation dropped, capped at MAX_TOKENS."""
    return _WORD.findall(text.lower())[:MAX_TOKENS]


def bucket(word: str, n_buckets: int, salt: str = "") -> int:
    """Stable hash bucket in [1, n_buckets); 0 is reserved for padding."""
    return 1 + zlib.crc32((salt + word).encode("utf-8")) % (n_buckets - 1)


def bucket_ids(text: str, n_buckets: int, salt: str = "") -> list[int]:
    return [bucket(w, n_buckets, salt) for w in tokenize(text)]


def parse_counts(text: str) -> dict[str, int]:
    """Recover drawer/door counts from templated text.

    A count word may be separated from its noun by up to two adjectives
    ("two sliding drawers", "one hinged door").
    """
    words = tokenize(text)
    counts = {"drawer": 0, "door": 0}
    for i, w in enumerate(words):
        noun = w[:-1] if w.endswith("s") else w
        if noun not in counts:
            continue
        for back in range(1, 4):
            if i - back < 0:
                break
            prev = words[i - back]
            if prev in NUMBER_WORDS:
                counts[noun] = max(counts[noun], NUMBER_WORDS[prev])
                break
            if prev in ("and", "with", "of", "the"):
                break
    return counts
