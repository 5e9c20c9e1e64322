"""Frozen agent backbone: feature embedding, action head, and name-based
action resolution.

The embedding packs one step of experience into a fixed 128-float vector
with a documented block layout:

* [0:64)    view block: two 5x5 egocentric planes (object and receptacle
            type codes for cells within Chebyshev distance 2), agent
            position, facing one-hot, carry flag, forward-blocked flag,
            door-flag channel, step fraction, bias, and view-density counts
* [64:96)   instruction block: hashed bag-of-words of the instruction text
* [96:104)  carried block: one-hot over object types for the carried object
* [104:128) context block: entry count plus the mean per-entry digest of the
            retrieved context (all zeros when the context is empty)

Blocks only depend on their own inputs, so changing the context changes
nothing outside the context block, and editing one instruction word touches
only the instruction block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hashing import bow_vector, fnv1a64, tokenize
from .memory import Context, MemoryEntry
from .nn import NumericError, Rng, log_softmax, mlp_forward, softmax
from .world import (
    ACTION_NAMES, FACINGS, NUM_ACTIONS, OBJECT_TYPES, RECEPTACLE_TYPES,
    Instruction, Observation,
)

FEATURE_DIM = 128

VIEW_SLICE = slice(0, 64)
INSTR_SLICE = slice(64, 96)
CARRIED_SLICE = slice(96, 104)
CONTEXT_SLICE = slice(104, 128)

_PLANE_RADIUS = 2
_PLANE_SIDE = 2 * _PLANE_RADIUS + 1
_ENTRY_DIGEST_DIM = 23

_DELTAS = {"north": (0, -1), "east": (1, 0), "south": (0, 1), "west": (-1, 0)}
_FACING_ANGLES = {name: i * math.pi / 2 for i, name in enumerate(FACINGS)}


class ResolutionError(ValueError):
    """Raised when an action name cannot be matched to the action table."""


def type_code(name: str) -> float:
    """Stable per-type scalar in [0.1, 1.0) derived from the FNV-1a hash."""
    return 0.1 + 0.9 * (fnv1a64(name) % 4096) / 4096.0


def _view_block(obs: Observation) -> np.ndarray:
    block = np.zeros(64)
    agent = next(r for r in obs.visible_cells if r["kind"] == "agent")
    ax, ay = agent["x"], agent["y"]
    n_objects = 0
    n_receptacles = 0
    n_walls = 0
    for record in obs.visible_cells:
        kind = record["kind"]
        if kind == "agent":
            continue
        dx, dy = record["x"] - ax, record["y"] - ay
        in_plane = abs(dx) <= _PLANE_RADIUS and abs(dy) <= _PLANE_RADIUS
        cell = (dy + _PLANE_RADIUS) * _PLANE_SIDE + (dx + _PLANE_RADIUS)
        if kind == "object":
            n_objects += 1
            if in_plane:
                block[cell] = max(block[cell], type_code(record["name"]))
        elif kind == "receptacle":
            n_receptacles += 1
            if in_plane:
                block[25 + cell] = max(block[25 + cell], type_code(record["name"]))
            if record.get("detail") == "open":
                block[58] = 1.0
            elif record.get("detail") == "closed":
                block[58] = -1.0
        elif kind == "wall":
            n_walls += 1
    block[50] = ax / max(obs.width - 1, 1)
    block[51] = ay / max(obs.height - 1, 1)
    block[52 + FACINGS.index(agent["facing"])] = 1.0
    block[56] = 1.0 if agent["carried"] else 0.0
    fdx, fdy = _DELTAS[agent["facing"]]
    ahead = (ax + fdx, ay + fdy)
    blocked = any(
        r["x"] == ahead[0] and r["y"] == ahead[1] and r["kind"] in ("wall", "receptacle")
        for r in obs.visible_cells
    )
    block[57] = 1.0 if blocked else 0.0
    block[59] = obs.step_index / max(obs.max_steps, 1)
    block[60] = 1.0
    ball = (2 * obs.view_radius + 1) ** 2
    block[61] = n_walls / ball
    block[62] = n_objects / 8.0
    block[63] = n_receptacles / 8.0
    return block


def entry_digest(entry: MemoryEntry) -> np.ndarray:
    """Fixed-width summary of one stored entry, pooled into the context block."""
    digest = np.zeros(_ENTRY_DIGEST_DIM)
    tokens = set(tokenize(entry.obs_summary))
    for i, name in enumerate(OBJECT_TYPES):
        if name in tokens:
            digest[i] = 1.0
    for i, name in enumerate(RECEPTACLE_TYPES):
        if name in tokens:
            digest[8 + i] = 1.0
    feat = entry.feature
    digest[14] = feat[50]
    digest[15] = feat[51]
    facing_idx = int(np.argmax(feat[52:56]))
    angle = facing_idx * math.pi / 2
    digest[16] = math.cos(angle)
    digest[17] = math.sin(angle)
    digest[18] = feat[56]
    digest[19] = feat[58]
    digest[20] = feat[59]
    digest[21] = entry.action_taken / (NUM_ACTIONS - 1)
    digest[22] = 1.0
    return digest


def _context_block(ctx: Context) -> np.ndarray:
    """[fill fraction] + mean per-entry digest of the retrieved context.

    Averaging keeps the block a fixed width for any context size. Presence
    bits become presence fractions (how much of the retrieved context
    mentions a pear, saw an open door, ...), and the position slots become
    the centroid of where the remembered steps happened, so the block
    degrades smoothly as the retrieved set gets noisier.
    """
    block = np.zeros(24)
    n = len(ctx.entries)
    if n == 0:
        return block
    budget = ctx.budget if ctx.budget else n
    block[0] = n / max(budget, 1)
    block[1:] = np.mean([entry_digest(e) for e in ctx.entries], axis=0)
    return block


def embed(obs: Observation, instruction: Instruction, ctx: Context) -> np.ndarray:
    """Pure function of (observation, instruction, context) -> 128 floats."""
    features = np.zeros(FEATURE_DIM)
    features[VIEW_SLICE] = _view_block(obs)
    features[INSTR_SLICE] = bow_vector(instruction.text, 32)
    agent = next(r for r in obs.visible_cells if r["kind"] == "agent")
    if agent["carried"]:
        features[CARRIED_SLICE.start + OBJECT_TYPES.index(agent["carried"])] = 1.0
    features[CONTEXT_SLICE] = _context_block(ctx)
    return features


# ---------------------------------------------------------------------------
# Action head
# ---------------------------------------------------------------------------


@dataclass
class BackboneParams:
    """Action head weights plus a frozen marker for the shipped policy."""
    head: dict[str, np.ndarray]
    frozen: bool = True


def _action_name(action: int) -> str:
    return ACTION_NAMES[action] if action < len(ACTION_NAMES) else str(action)


def act(features: np.ndarray, params: BackboneParams, mode: str = "greedy",
        rng: Rng | None = None) -> tuple[int, str, float]:
    """Score actions for one feature vector.

    Returns (action_id, action_name, log_prob). Greedy mode breaks logit
    ties toward the lowest action id.
    """
    logits, _ = mlp_forward(params.head, features)
    logits = logits[0]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite action logits")
    logp = log_softmax(logits)
    if mode == "greedy":
        action = int(np.argmax(logits))
        return action, _action_name(action), float(logp[action])
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        probs = softmax(logits)
        draw = rng.random()
        acc = 0.0
        action = len(probs) - 1
        for i, p in enumerate(probs):
            acc += float(p)
            if draw < acc:
                action = i
                break
        return action, _action_name(action), float(logp[action])
    raise ValueError(f"unknown act mode {mode!r}")


def resolve_action(name: str, claimed_id: int | None = None) -> int:
    """Map an action name to its id; any claimed id is ignored.

    Exact (case-insensitive) name matches win; otherwise the action whose
    name shares at least half of the query's tokens, with the highest
    overlap, is chosen (ties toward the lowest id). Unresolvable names raise
    ResolutionError.
    """
    del claimed_id  # names are authoritative; ids from the caller are untrusted
    query = name.strip().lower()
    for i, action_name in enumerate(ACTION_NAMES):
        if action_name == query:
            return i
    tokens = set(tokenize(query))
    if not tokens:
        raise ResolutionError("empty action name")
    best_id, best_score = None, 0.0
    for i, action_name in enumerate(ACTION_NAMES):
        overlap = len(tokens & set(tokenize(action_name))) / len(tokens)
        if overlap > best_score:
            best_id, best_score = i, overlap
    if best_id is None or best_score < 0.5:
        raise ResolutionError(f"cannot resolve action name {name!r}")
    return best_id
