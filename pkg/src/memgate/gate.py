"""Write gates: decide per step whether the current observation is stored.

Two families: a trainable sigmoid head over the step features (modes
"offline_supervised" and "online_rl" depending on how it was trained), and a
parameter-free novelty heuristic that keeps an observation only when it is
sufficiently dissimilar from everything already stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hashing import cosine
from .memory import MemoryStore
from .nn import PROB_FLOOR, Rng, mlp_forward, sigmoid

GATE_MODES = ("simple", "offline_supervised", "online_rl")


@dataclass
class GateParams:
    head: dict[str, np.ndarray]
    mode: str
    threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in GATE_MODES:
            raise ValueError(f"unknown gate mode {self.mode!r}")


@dataclass(frozen=True)
class GateDecision:
    p_keep: float
    bit: int
    log_prob: float | None = None


def gate_forward(params: GateParams, features: np.ndarray,
                 mode: str = "threshold", rng: Rng | None = None) -> GateDecision:
    """Evaluate the learned gate on one feature vector.

    mode "threshold" is deterministic (bit = p >= threshold); mode "sample"
    draws the bit from Bernoulli(p) and reports log prob of the drawn bit.
    """
    logits, _ = mlp_forward(params.head, features)
    p = float(sigmoid(logits[0, 0]))
    if mode == "threshold":
        return GateDecision(p_keep=p, bit=int(p >= params.threshold))
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        bit = rng.bernoulli(p)
        chosen = p if bit else 1.0 - p
        log_prob = math.log(max(chosen, PROB_FLOOR))
        return GateDecision(p_keep=p, bit=bit, log_prob=log_prob)
    raise ValueError(f"unknown gate mode {mode!r}")


def heuristic_gate(features: np.ndarray, store: MemoryStore,
                   tau: float = 0.3) -> GateDecision:
    """Novelty gate: keep iff 1 - max cosine similarity to the store >= tau.

    An empty store always keeps (there is nothing to be redundant with), so
    tau > 1 degenerates to keeping only the first observation.
    """
    if not store.entries:
        return GateDecision(p_keep=1.0, bit=1)
    novelty = 1.0 - max(cosine(features, e.feature) for e in store.entries)
    novelty = min(max(novelty, 0.0), 1.0)
    return GateDecision(p_keep=novelty, bit=int(novelty >= tau))
