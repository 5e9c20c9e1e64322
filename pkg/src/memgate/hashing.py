"""Deterministic text hashing: FNV-1a and hashed bag-of-words vectors."""

from __future__ import annotations

import re

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_fnv_cache: dict[str, int] = {}
_bow_cache: dict[tuple[str, int], np.ndarray] = {}


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of text."""
    cached = _fnv_cache.get(text)
    if cached is not None:
        return cached
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    _fnv_cache[text] = h
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs, in order of appearance."""
    return _TOKEN_RE.findall(text.lower())


def bow_vector(text: str, width: int) -> np.ndarray:
    """Hashed bag-of-words: token counts bucketed by FNV-1a modulo width,
    normalized by the token count. Empty text gives the zero vector."""
    key = (text, width)
    cached = _bow_cache.get(key)
    if cached is not None:
        return cached
    vec = np.zeros(width)
    tokens = tokenize(text)
    for tok in tokens:
        vec[fnv1a64(tok) % width] += 1.0
    if tokens:
        vec /= float(len(tokens))
    vec.setflags(write=False)
    _bow_cache[key] = vec
    return vec


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; zero-norm inputs score 0.0 instead of dividing."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))
