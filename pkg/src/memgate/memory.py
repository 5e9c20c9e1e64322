"""Episodic memory: a bounded append-only store with gated insertion and
budgeted relevance retrieval.

Entries are scored for retrieval by the cosine similarity between a hashed
bag-of-words vector of the entry's observation summary and the instruction's
vector in the same hashed space, so what was seen is compared against what
the task asks for. Retrieval returns the top-h entries in chronological
order; score ties prefer the more recent entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hashing import bow_vector, cosine

SUMMARY_VEC_WIDTH = 32


class MemoryUsageError(RuntimeError):
    """Raised when store operations are driven incorrectly."""


@dataclass(frozen=True)
class MemoryEntry:
    step_index: int
    obs_summary: str
    feature: np.ndarray
    action_taken: int

    @property
    def summary_vec(self) -> np.ndarray:
        return bow_vector(self.obs_summary, SUMMARY_VEC_WIDTH)


@dataclass
class MemoryStore:
    entries: list[MemoryEntry] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Context:
    """Entries selected for conditioning, chronological, at most budget-many."""
    entries: tuple[MemoryEntry, ...]
    budget: int | None


def maybe_insert(store: MemoryStore, obs, action: int, feature: np.ndarray,
                 bit: int) -> bool:
    """Append (obs, action) to the store iff the gate bit is 1.

    The write decision is made here and never revisited: entries are
    immutable and the store only grows.
    """
    if bit not in (0, 1):
        raise ValueError(f"gate bit must be 0 or 1, got {bit!r}")
    if bit == 0:
        return False
    if store.entries and obs.step_index <= store.entries[-1].step_index:
        raise MemoryUsageError(
            f"step_index {obs.step_index} not after last stored "
            f"{store.entries[-1].step_index}"
        )
    feature = np.asarray(feature, dtype=float)
    if feature.ndim != 1:
        raise ValueError("feature must be a flat vector")
    store.entries.append(MemoryEntry(
        step_index=obs.step_index,
        obs_summary=obs.state_summary,
        feature=feature.copy(),
        action_taken=int(action),
    ))
    return True


def retrieve(store: MemoryStore, instr_vec: np.ndarray, h: int | None) -> Context:
    """Top-h entries by relevance score, returned in chronological order.

    h=0 yields an empty context; h=None disables the budget and returns the
    full history. Zero-norm vectors score 0 rather than raising.
    """
    if h is not None:
        if h < 0:
            raise ValueError("retrieval budget must be >= 0")
        if h == 0:
            return Context(entries=(), budget=0)
    scored = [(cosine(e.summary_vec, instr_vec), e.step_index, i)
              for i, e in enumerate(store.entries)]
    scored.sort(key=lambda t: (-t[0], -t[1]))
    chosen = scored if h is None else scored[:h]
    chosen.sort(key=lambda t: t[1])
    return Context(entries=tuple(store.entries[i] for _, _, i in chosen),
                   budget=h)


def kept_fraction(store: MemoryStore, total_steps: int) -> float:
    """Percentage of episode steps whose observations were written (0..100)."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if store.n > total_steps:
        raise MemoryUsageError(
            f"store holds {store.n} entries for only {total_steps} steps")
    return 100.0 * store.n / total_steps
