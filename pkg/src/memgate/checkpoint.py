"""Binary checkpoint container shared by the action head and the gate heads.

Layout: a 16-byte little-endian header (magic "MG01", u16 format version,
u16 mode tag, u32 input width, u32 output width) followed by the head's
weight matrices and bias vectors as flat float64, in the fixed order
w1, b1, w2, b2, w3, b3. Hidden widths are part of the format contract.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import HIDDEN_1, HIDDEN_2

MAGIC = b"MG01"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHII")

MODE_TAGS = {
    "backbone": 0,
    "simple": 1,
    "offline_supervised": 2,
    "online_rl": 3,
}
TAG_MODES = {v: k for k, v in MODE_TAGS.items()}


class CheckpointError(RuntimeError):
    """Raised for unreadable, mismatched, or truncated checkpoint files."""


def _expected_sizes(in_dim: int, out_dim: int) -> list[tuple[str, tuple[int, int]]]:
    return [
        ("w1", (in_dim, HIDDEN_1)), ("b1", (HIDDEN_1,)),
        ("w2", (HIDDEN_1, HIDDEN_2)), ("b2", (HIDDEN_2,)),
        ("w3", (HIDDEN_2, out_dim)), ("b3", (out_dim,)),
    ]


def save_head(path, head: dict[str, np.ndarray], mode: str) -> None:
    in_dim = head["w1"].shape[0]
    out_dim = head["w3"].shape[1]
    for key, shape in _expected_sizes(in_dim, out_dim):
        if head[key].shape != shape:
            raise CheckpointError(
                f"{key} has shape {head[key].shape}, expected {shape}")
    blob = _HEADER.pack(MAGIC, FORMAT_VERSION, MODE_TAGS[mode], in_dim, out_dim)
    payload = b"".join(
        np.ascontiguousarray(head[key], dtype="<f8").tobytes()
        for key, _ in _expected_sizes(in_dim, out_dim)
    )
    Path(path).write_bytes(blob + payload)


def load_head(path) -> tuple[dict[str, np.ndarray], str]:
    """Read a checkpoint; returns (head params, mode name)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: too short for a checkpoint header")
    magic, version, mode_tag, in_dim, out_dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if mode_tag not in TAG_MODES:
        raise CheckpointError(f"{path}: unknown mode tag {mode_tag}")
    sizes = _expected_sizes(in_dim, out_dim)
    total = sum(int(np.prod(shape)) for _, shape in sizes)
    body = raw[_HEADER.size:]
    if len(body) != total * 8:
        raise CheckpointError(
            f"{path}: payload holds {len(body) // 8} floats, expected {total}")
    flat = np.frombuffer(body, dtype="<f8").astype(float)
    head: dict[str, np.ndarray] = {}
    offset = 0
    for key, shape in sizes:
        size = int(np.prod(shape))
        head[key] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return head, TAG_MODES[mode_tag]
