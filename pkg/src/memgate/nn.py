"""Minimal numeric kernel: seeded RNG streams, a small MLP with manual
backpropagation, binary cross-entropy, policy-gradient helpers, Adam, and a
finite-difference gradient checker.

Everything here operates on float64 numpy arrays and is deterministic given a
seed. Parameter sets are plain dicts of named arrays so the same update and
serialization code serves every head in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HIDDEN_1 = 64
HIDDEN_2 = 32

PROB_FLOOR = 1e-7


class NumericError(RuntimeError):
    """Raised when a computation produces non-finite values."""


# ---------------------------------------------------------------------------
# Seeded, splittable random streams
# ---------------------------------------------------------------------------


class Rng:
    """Counter-based random stream that can be split into independent children.

    Children are derived from the root seed plus a tuple of split indices, so
    stream identity depends only on (seed, path) and never on draw order in
    sibling streams.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def split(self, *indices: int) -> "Rng":
        return Rng(self.seed, self.path + tuple(indices))

    def random(self) -> float:
        return float(self._gen.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self._gen.uniform(low, high))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def bernoulli(self, p: float) -> int:
        return 1 if self._gen.random() < p else 0

    def choice(self, seq):
        if len(seq) == 0:
            raise ValueError("choice from empty sequence")
        return seq[self.integers(0, len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle (works on plain Python lists)."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integers(0, i + 1)
            items[i], items[j] = items[j], items[i]


# ---------------------------------------------------------------------------
# Three-layer MLP with manual backpropagation
# ---------------------------------------------------------------------------


def mlp_init(in_dim: int, out_dim: int, rng: Rng) -> dict[str, np.ndarray]:
    """Initialize weights for in_dim -> 64 -> 32 -> out_dim with tanh hiddens."""
    def layer(n_in, n_out, r):
        return r.normal((n_in, n_out)) / math.sqrt(n_in)

    return {
        "w1": layer(in_dim, HIDDEN_1, rng.split(1)),
        "b1": np.zeros(HIDDEN_1),
        "w2": layer(HIDDEN_1, HIDDEN_2, rng.split(2)),
        "b2": np.zeros(HIDDEN_2),
        "w3": layer(HIDDEN_2, out_dim, rng.split(3)),
        "b3": np.zeros(out_dim),
    }


def mlp_forward(params: dict[str, np.ndarray], x: np.ndarray):
    """Forward pass. x has shape (n, in_dim); returns (out, cache).

    Hidden activations are tanh, the output layer is linear (logits).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params["w1"].shape[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match weights "
            f"({params['w1'].shape[0]})"
        )
    a1 = np.tanh(x @ params["w1"] + params["b1"])
    a2 = np.tanh(a1 @ params["w2"] + params["b2"])
    out = a2 @ params["w3"] + params["b3"]
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite MLP output")
    return out, (x, a1, a2)


def mlp_backward(params: dict[str, np.ndarray], cache, dout: np.ndarray) -> dict[str, np.ndarray]:
    """Backward pass given d loss / d logits. Returns grads keyed like params."""
    x, a1, a2 = cache
    dout = np.atleast_2d(np.asarray(dout, dtype=float))
    dw3 = a2.T @ dout
    db3 = dout.sum(axis=0)
    da2 = dout @ params["w3"].T
    dz2 = da2 * (1.0 - a2 * a2)
    dw2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ params["w2"].T
    dz1 = da1 * (1.0 - a1 * a1)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}


# ---------------------------------------------------------------------------
# Losses and policy-gradient helpers
# ---------------------------------------------------------------------------


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(y, p_hat):
    """Binary cross-entropy (negated log-likelihood) and its logit gradient.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the log. Returns
    (mean loss, d loss / d logit) where the per-sample logit gradient is
    p_hat - y.
    """
    y = np.asarray(y, dtype=float)
    p = np.asarray(p_hat, dtype=float)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    p = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))
    if not math.isfinite(loss):
        raise NumericError("non-finite BCE loss")
    return loss, p - y


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def discounted_returns(rewards, gamma: float) -> list[float]:
    """Suffix sums G_t = r_t + gamma * G_{t+1}, computed by a reverse scan."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    out: list[float] = []
    acc = 0.0
    for r in reversed(list(rewards)):
        acc = float(r) + gamma * acc
        out.append(acc)
    out.reverse()
    return out


def reinforce_scales(returns, baseline: float) -> np.ndarray:
    """Per-step gradient scales (G_t - baseline) for score-function updates."""
    g = np.asarray(list(returns), dtype=float)
    if not np.all(np.isfinite(g)) or not math.isfinite(baseline):
        raise NumericError("non-finite returns or baseline")
    return g - float(baseline)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One Adam update, in place, over a dict of named parameter arrays."""
    if set(params) != set(grads):
        raise ValueError("parameter and gradient keys differ")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {key}")
        if key not in state.m:
            state.m[key] = np.zeros_like(params[key])
            state.v[key] = np.zeros_like(params[key])
        state.m[key] = b1 * state.m[key] + (1 - b1) * g
        state.v[key] = b2 * state.v[key] + (1 - b2) * (g * g)
        m_hat = state.m[key] / (1 - b1 ** state.t)
        v_hat = state.v[key] / (1 - b2 ** state.t)
        params[key] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale the whole gradient dict so its global L2 norm is <= max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for key in grads:
            grads[key] = grads[key] * scale
    return total


def tree_scale(grads: dict[str, np.ndarray], factor: float) -> dict[str, np.ndarray]:
    return {k: g * factor for k, g in grads.items()}


def tree_add(acc: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for k, g in grads.items():
        acc[k] = acc.get(k, 0.0) + g


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def finite_diff_check(params: dict[str, np.ndarray], loss_and_grad, rng: Rng,
                      num_probes: int = 50, step: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    loss_and_grad(params) must return (scalar loss, grads dict). Probes
    num_probes randomly chosen coordinates and returns the maximum
    |analytic - numeric| / max(|numeric|, 1e-8) over the probes.
    """
    keys = sorted(params)
    _, grads = loss_and_grad(params)
    worst = 0.0
    for _ in range(num_probes):
        key = keys[rng.integers(0, len(keys))]
        flat_index = rng.integers(0, params[key].size)
        idx = np.unravel_index(flat_index, params[key].shape)
        original = params[key][idx]
        params[key][idx] = original + step
        loss_plus, _ = loss_and_grad(params)
        params[key][idx] = original - step
        loss_minus, _ = loss_and_grad(params)
        params[key][idx] = original
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        analytic = grads[key][idx]
        err = abs(analytic - numeric) / max(abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
