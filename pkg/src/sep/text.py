"""Tokenisation and stable hashing shared by clustering and the tuner."""

import hashlib
import re
from functools import lru_cache

_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str, min_len: int = 2) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than ``min_len``."""
    return [t for t in _SPLIT.split(text.lower()) if len(t) >= min_len]


def ngrams(tokens: list[str], n_max: int = 2) -> list[str]:
    grams = list(tokens)
    for n in range(2, n_max + 1):
        grams.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return grams


@lru_cache(maxsize=1 << 16)
def stable_hash(key: str) -> int:
    """64-bit little-endian blake2b digest of ``key``; independent of PYTHONHASHSEED."""
    return int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")
