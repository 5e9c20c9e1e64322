"""Write-gated episodic memory for embodied gridworld agents.

A bounded memory store grows only when a learned binary gate decides the
current observation is worth keeping. The package provides the gridworld
and task generator, a frozen hand-rolled feature extractor with a
behavior-cloned action head, the gated memory store with lexical top-h
retrieval, offline (supervised) and online (REINFORCE) gate training, and
a paired evaluation harness, all reproducible from seeds alone.
"""

__version__ = "0.1.0"

from .backbone import BackboneParams, embed, act, resolve_action
from .gate import GateParams, gate_forward, heuristic_gate
from .memory import Context, MemoryEntry, MemoryStore, maybe_insert, retrieve
from .world import Env, Instruction, Observation, generate_task, reset

__all__ = [
    "BackboneParams", "Context", "Env", "GateParams", "Instruction",
    "MemoryEntry", "MemoryStore", "Observation", "act", "embed",
    "gate_forward", "generate_task", "heuristic_gate", "maybe_insert",
    "reset", "resolve_action", "retrieve", "__version__",
]
