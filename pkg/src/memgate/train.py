"""Training regimes for the write gate and the cloned action head.

Offline: roll the expert with complete memory, corrupt a fraction of the
episodes so that failures and invalid actions occur, label each step 1 iff
the taken action was valid or the episode succeeded, balance the classes,
and fit the gate head with binary cross-entropy.

Online: sample both the gate bit and the action, reward each step with the
sparse task reward plus a valid-action bonus (minus an optional invalid
penalty), and apply batched REINFORCE updates with an EMA baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import world
from .backbone import FEATURE_DIM, BackboneParams, act, embed
from .expert import expert_act
from .gate import GateParams, gate_forward
from .hashing import bow_vector
from .memory import MemoryStore, kept_fraction, maybe_insert, retrieve
from .nn import (
    AdamState, NumericError, Rng, adam_step, bce_loss, clip_grad_norm,
    discounted_returns, mlp_backward, mlp_forward, mlp_init, reinforce_scales,
    sigmoid, softmax, tree_add, tree_scale,
)
from .world import DONE, MOVE_FORWARD, NUM_ACTIONS, PICK_BASE, GenParams

DATASET_SCHEMA = "dataset-v1"


class DatasetError(RuntimeError):
    """Raised when a dataset cannot support the requested training."""


@dataclass(frozen=True)
class LabeledSample:
    episode_id: int
    step_index: int
    subset: str
    features: np.ndarray
    label: int
    action_valid: bool
    episode_success: bool


@dataclass(frozen=True)
class CorruptionSpec:
    """How expert rollouts are degraded to produce negative labels.

    "random" replaces each step with a uniform random action with
    probability eps. "dwell" waits until the expert is about to pick or
    place and then, with probability eps, degenerates into spamming blind
    pick/place attempts in place for `burst` consecutive steps before
    recovering, so invalid actions cluster in instruction-relevant states
    whose retrieved context quickly fills with near-duplicates of the
    current view; repeated bursts run the episode out of time, which keeps
    those steps negatively labeled without tying them to any particular
    phase of the episode. "stuck" switches the actor to walking forward
    forever once a per-step trigger with probability eps fires, producing
    long runs of blocked (invalid) moves whose features are stale and
    repetitive.
    """
    fraction: float = 0.3
    eps: float = 0.25
    mode: str = "random"
    burst: int = 12


def _task_seed(seed: int, episode: int) -> int:
    return seed * 1_000_003 + episode


class _CorruptedExpert:
    def __init__(self, spec: CorruptionSpec, rng: Rng):
        self.spec = spec
        self.rng = rng
        self.stuck = False
        self.burst_left = 0

    def action(self, state, instruction) -> int:
        spec = self.spec
        if spec.mode == "random":
            if self.rng.random() < spec.eps:
                return self.rng.integers(0, NUM_ACTIONS)
            return expert_act(state, instruction)
        if spec.mode == "stuck":
            if not self.stuck and self.rng.random() < spec.eps:
                self.stuck = True
            if self.stuck:
                return MOVE_FORWARD
            return expert_act(state, instruction)
        if self.burst_left > 0:
            self.burst_left -= 1
            return self.rng.integers(PICK_BASE, DONE)
        action = expert_act(state, instruction)
        if PICK_BASE <= action < DONE and self.rng.random() < spec.eps:
            self.burst_left = spec.burst - 1
            return self.rng.integers(PICK_BASE, DONE)
        return action


def collect_expert_dataset(num_episodes: int, subsets, seed: int, h: int = 6,
                           gen_params: GenParams = world.DEFAULT_GEN,
                           corruption: CorruptionSpec = CorruptionSpec(),
                           ) -> list[LabeledSample]:
    """Expert rollouts with complete memory, labeled valid-or-success.

    Deterministic in (num_episodes, subsets, seed, params). Raises
    DatasetError when the result contains no negative labels, since such a
    dataset cannot train a discriminating gate.
    """
    subsets = list(subsets)
    if not subsets:
        raise ValueError("need at least one subset")
    samples: list[LabeledSample] = []
    saw_negative = False
    for episode in range(num_episodes):
        subset = subsets[episode % len(subsets)]
        config = world.generate_task(subset, _task_seed(seed, episode), gen_params)
        ep_rng = Rng(seed, path=(20, episode))
        corrupted = ep_rng.random() < corruption.fraction
        actor = _CorruptedExpert(corruption, ep_rng) if corrupted else None
        env = world.Env(config)
        obs = world.observe(env.state)
        instr = env.instruction
        instr_vec = bow_vector(instr.text, 32)
        store = MemoryStore()
        step_rows = []
        while not env.episode_over:
            ctx = retrieve(store, instr_vec, h)
            feat = embed(obs, instr, ctx)
            try:
                if actor is not None:
                    action = actor.action(env.state, instr)
                else:
                    action = expert_act(env.state, instr)
            except world.GenerationError:
                action = DONE
            result = env.step(action)
            step_rows.append((obs.step_index, feat, result.action_valid))
            maybe_insert(store, obs, action, feat, 1)
            obs = result.observation
        success = env.task_success
        for step_index, feat, valid in step_rows:
            label = 1 if (valid or success) else 0
            saw_negative = saw_negative or label == 0
            samples.append(LabeledSample(
                episode_id=episode, step_index=step_index, subset=subset,
                features=feat, label=label, action_valid=valid,
                episode_success=success,
            ))
    if not saw_negative:
        raise DatasetError(
            "no negative samples collected; raise the corruption fraction")
    return samples


def balance_dataset(samples, seed: int) -> list[LabeledSample]:
    """Downsample the majority class to the minority count, then shuffle."""
    positives = [s for s in samples if s.label == 1]
    negatives = [s for s in samples if s.label == 0]
    if not positives or not negatives:
        raise DatasetError("both label classes are required for balancing")
    rng = Rng(seed, path=(21,))
    if len(positives) > len(negatives):
        rng.shuffle(positives)
        positives = positives[:len(negatives)]
    else:
        rng.shuffle(negatives)
        negatives = negatives[:len(positives)]
    merged = positives + negatives
    rng.shuffle(merged)
    return merged


# ---------------------------------------------------------------------------
# Offline supervised gate training
# ---------------------------------------------------------------------------


def train_offline(samples, epochs: int, seed: int, lr: float = 1e-3,
                  batch_size: int = 32, stop_accuracy: float = 0.99,
                  ) -> tuple[GateParams, list[dict]]:
    """Fit the gate head with BCE + Adam; stops early at stop_accuracy."""
    if not samples:
        raise DatasetError("empty training set")
    x = np.stack([s.features for s in samples])
    y = np.array([float(s.label) for s in samples])
    rng = Rng(seed, path=(22,))
    head = mlp_init(x.shape[1], 1, rng.split(0))
    state = AdamState(lr=lr)
    history: list[dict] = []
    indices = list(range(len(samples)))
    for epoch in range(epochs):
        rng.shuffle(indices)
        for lo in range(0, len(indices), batch_size):
            batch = indices[lo:lo + batch_size]
            logits, cache = mlp_forward(head, x[batch])
            probs = sigmoid(logits[:, 0])
            _, dlogit = bce_loss(y[batch], probs)
            grads = mlp_backward(head, cache, (dlogit / len(batch))[:, None])
            adam_step(head, grads, state)
        logits, _ = mlp_forward(head, x)
        probs = sigmoid(logits[:, 0])
        loss, _ = bce_loss(y, probs)
        accuracy = float(np.mean((probs >= 0.5) == (y == 1.0)))
        history.append({"epoch": epoch, "loss": loss, "accuracy": accuracy})
        if accuracy >= stop_accuracy:
            break
    return GateParams(head=head, mode="offline_supervised"), history


def gate_accuracy(params: GateParams, samples) -> float:
    x = np.stack([s.features for s in samples])
    y = np.array([float(s.label) for s in samples])
    logits, _ = mlp_forward(params.head, x)
    probs = sigmoid(logits[:, 0])
    return float(np.mean((probs >= 0.5) == (y == 1.0)))


# ---------------------------------------------------------------------------
# Behavior cloning of the action head
# ---------------------------------------------------------------------------

_CLONE_REGIMES = ("heuristic", "heuristic", "random")


def clone_action_head(num_episodes: int, subsets, seed: int, h: int = 6,
                      gen_params: GenParams = world.DEFAULT_GEN,
                      epochs: int = 30, lr: float = 1e-3, batch_size: int = 32,
                      dagger_rounds: int = 0, dagger_episodes: int | None = None,
                      ) -> tuple[BackboneParams, list[dict]]:
    """Behavior-clone the expert into the action head, then freeze it.

    Rollouts cycle through write regimes dominated by the novelty heuristic
    with periodic random-bit episodes mixed in, so the clone is trained
    against selective, deduplicated context digests (plus some noisy ones)
    rather than flooded stores. Optional aggregation rounds roll the current
    clone and relabel each visited state with the expert's action, which
    covers the clone's own drift states (including states whose correct
    action depends on earlier sightings held only in memory).
    """
    from .gate import heuristic_gate

    subsets = list(subsets)
    if dagger_episodes is None:
        dagger_episodes = num_episodes // 2
    features: list[np.ndarray] = []
    labels: list[int] = []

    def roll(count: int, offset: int, head) -> None:
        actor = BackboneParams(head=head, frozen=True) if head is not None else None
        for episode in range(offset, offset + count):
            subset = subsets[episode % len(subsets)]
            config = world.generate_task(subset, _task_seed(seed, episode),
                                         gen_params)
            regime = _CLONE_REGIMES[episode % len(_CLONE_REGIMES)]
            ep_rng = Rng(seed, path=(30, episode))
            env = world.Env(config)
            obs = world.observe(env.state)
            instr = env.instruction
            instr_vec = bow_vector(instr.text, 32)
            store = MemoryStore()
            while not env.episode_over:
                ctx = retrieve(store, instr_vec, 0 if regime == "none" else h)
                feat = embed(obs, instr, ctx)
                try:
                    label = expert_act(env.state, instr)
                except world.GenerationError:
                    label = DONE
                features.append(feat)
                labels.append(label)
                if actor is None:
                    action = label
                else:
                    action, _, _ = act(feat, actor, mode="greedy")
                if regime == "complete":
                    bit = 1
                elif regime == "none":
                    bit = 0
                elif regime == "heuristic":
                    bit = heuristic_gate(feat, store).bit
                else:
                    bit = ep_rng.bernoulli(0.5)
                maybe_insert(store, obs, action, feat, bit)
                result = env.step(action)
                obs = result.observation

    rng = Rng(seed, path=(31,))
    head = mlp_init(FEATURE_DIM, NUM_ACTIONS, rng.split(0))
    state = AdamState(lr=lr)
    history: list[dict] = []

    def fit() -> None:
        x = np.stack(features)
        y = np.array(labels, dtype=int)
        indices = list(range(len(labels)))
        onehot = np.eye(NUM_ACTIONS)[y]
        for epoch in range(epochs):
            rng.shuffle(indices)
            for lo in range(0, len(indices), batch_size):
                batch = indices[lo:lo + batch_size]
                logits, cache = mlp_forward(head, x[batch])
                probs = softmax(logits)
                dlogits = (probs - onehot[batch]) / len(batch)
                grads = mlp_backward(head, cache, dlogits)
                adam_step(head, grads, state)
            logits, _ = mlp_forward(head, x)
            accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
            shifted = logits - logits.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            loss = float(np.mean(-logp[np.arange(len(y)), y]))
            history.append({"epoch": epoch, "loss": loss, "accuracy": accuracy})
            if accuracy >= 0.995:
                break

    roll(num_episodes, 0, None)
    fit()
    for round_index in range(dagger_rounds):
        roll(dagger_episodes, num_episodes + round_index * dagger_episodes, head)
        fit()
    return BackboneParams(head=head, frozen=True), history


# ---------------------------------------------------------------------------
# Online REINFORCE
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    subset: str
    features: np.ndarray
    actions: list[int]
    action_logps: list[float]
    gate_bits: list[int]
    gate_ps: list[float]
    gate_logps: list[float]
    valids: list[bool]
    sparse_rewards: list[float]
    rewards: list[float]
    returns: list[float]
    success: bool
    steps: int
    kept_percent: float


def step_reward(sparse: float, valid: bool, invalid_penalty: float) -> float:
    """Dense shaping: task reward plus 1 for a valid action, minus the
    configured penalty for an invalid one."""
    bonus = 1.0 if valid else -float(invalid_penalty)
    return float(sparse) + bonus


def rollout_online(config, backbone: BackboneParams, gate: GateParams,
                   rng: Rng, h: int, gamma: float = 0.99,
                   invalid_penalty: float = 0.0) -> Trajectory:
    """One sampled episode: stochastic action head and stochastic gate."""
    env = world.Env(config)
    obs = world.observe(env.state)
    instr = env.instruction
    instr_vec = bow_vector(instr.text, 32)
    store = MemoryStore()
    feats, actions, action_logps = [], [], []
    bits, ps, gate_logps, valids, sparse, rewards = [], [], [], [], [], []
    while not env.episode_over:
        ctx = retrieve(store, instr_vec, h)
        feat = embed(obs, instr, ctx)
        action, _, logp = act(feat, backbone, mode="sample", rng=rng)
        decision = gate_forward(gate, feat, mode="sample", rng=rng)
        maybe_insert(store, obs, action, feat, decision.bit)
        result = env.step(action)
        feats.append(feat)
        actions.append(action)
        action_logps.append(logp)
        bits.append(decision.bit)
        ps.append(decision.p_keep)
        gate_logps.append(decision.log_prob)
        valids.append(result.action_valid)
        sparse.append(result.reward)
        rewards.append(step_reward(result.reward, result.action_valid,
                                   invalid_penalty))
        obs = result.observation
    steps = env.state.step_count
    return Trajectory(
        subset=instr.subset, features=np.stack(feats), actions=actions,
        action_logps=action_logps, gate_bits=bits, gate_ps=ps,
        gate_logps=gate_logps, valids=valids, sparse_rewards=sparse,
        rewards=rewards, returns=discounted_returns(rewards, gamma),
        success=env.task_success, steps=steps,
        kept_percent=kept_fraction(store, steps),
    )


class _BatchedReinforce:
    """Accumulates per-episode policy gradients and applies them every k
    episodes: mean over the batch, global-norm clipping, then Adam."""

    def __init__(self, heads: dict[str, dict], lr: float, clip: float,
                 batch_episodes: int):
        self.heads = heads
        self.adam = {name: AdamState(lr=lr) for name in heads}
        self.clip = clip
        self.batch_episodes = batch_episodes
        self.acc = {name: {} for name in heads}
        self.count = 0

    def add_episode(self, grads_by_head: dict[str, dict]) -> None:
        for name, grads in grads_by_head.items():
            tree_add(self.acc[name], grads)
        self.count += 1
        if self.count >= self.batch_episodes:
            self.flush()

    def flush(self) -> None:
        if self.count == 0:
            return
        for name, head in self.heads.items():
            if not self.acc[name]:
                continue
            grads = tree_scale(self.acc[name], 1.0 / self.count)
            clip_grad_norm(grads, self.clip)
            adam_step(head, grads, self.adam[name])
        self.acc = {name: {} for name in self.heads}
        self.count = 0


def _gate_episode_grads(head, features, bits, scales) -> dict:
    logits, cache = mlp_forward(head, features)
    p = sigmoid(logits[:, 0])
    dlogit = -(np.asarray(bits, dtype=float) - p) * scales
    return mlp_backward(head, cache, dlogit[:, None])


def _action_episode_grads(head, features, actions, scales) -> dict:
    logits, cache = mlp_forward(head, features)
    probs = softmax(logits)
    onehot = np.eye(logits.shape[1])[np.asarray(actions, dtype=int)]
    dlogits = -(onehot - probs) * scales[:, None]
    return mlp_backward(head, cache, dlogits)


class _EmaBaseline:
    def __init__(self, decay: float):
        self.decay = decay
        self.value = 0.0
        self.initialized = False

    def update(self, episode_return: float) -> None:
        if not self.initialized:
            self.value = episode_return
            self.initialized = True
        else:
            self.value = self.decay * self.value + (1 - self.decay) * episode_return


def train_online(num_episodes: int, subsets, seed: int,
                 backbone: BackboneParams, h: int = 6,
                 gen_params: GenParams = world.DEFAULT_GEN,
                 gamma: float = 0.99, lr: float = 1e-3, clip: float = 5.0,
                 baseline_decay: float = 0.95, batch_episodes: int = 8,
                 invalid_penalty: float = 0.0,
                 finetune_action_head: bool = True,
                 gate_init: dict | None = None,
                 ) -> tuple[GateParams, BackboneParams, list[dict]]:
    """REINFORCE over sampled rollouts; returns gate, action head, curve."""
    subsets = list(subsets)
    rng = Rng(seed, path=(23,))
    gate_head = gate_init if gate_init is not None else mlp_init(FEATURE_DIM, 1, rng.split(0))
    gate = GateParams(head=gate_head, mode="online_rl")
    action_head = {k: v.copy() for k, v in backbone.head.items()}
    policy = BackboneParams(head=action_head, frozen=False)
    heads = {"gate": gate_head}
    if finetune_action_head:
        heads["action"] = action_head
    updater = _BatchedReinforce(heads, lr=lr, clip=clip,
                                batch_episodes=batch_episodes)
    baseline = _EmaBaseline(baseline_decay)
    curve: list[dict] = []
    for episode in range(num_episodes):
        subset = subsets[episode % len(subsets)]
        config = world.generate_task(subset, _task_seed(seed, episode), gen_params)
        traj = rollout_online(config, policy, gate, rng.split(1, episode), h,
                              gamma=gamma, invalid_penalty=invalid_penalty)
        scales = reinforce_scales(traj.returns, baseline.value)
        baseline.update(traj.returns[0])
        grads = {"gate": _gate_episode_grads(gate_head, traj.features,
                                             traj.gate_bits, scales)}
        if finetune_action_head:
            grads["action"] = _action_episode_grads(action_head, traj.features,
                                                    traj.actions, scales)
        updater.add_episode(grads)
        if not math.isfinite(baseline.value):
            raise NumericError("baseline diverged")
        curve.append({"episode": episode, "return": traj.returns[0],
                      "success": traj.success, "kept_fraction": traj.kept_percent})
    updater.flush()
    return (GateParams(head=gate_head, mode="online_rl"),
            BackboneParams(head=action_head, frozen=True), curve)


# ---------------------------------------------------------------------------
# Single-step bandit harnesses (training-dynamics oracles)
# ---------------------------------------------------------------------------


def bandit_keep_probability(num_episodes: int, seed: int, lr: float = 1e-3,
                            batch_episodes: int = 8, clip: float = 5.0,
                            baseline_decay: float = 0.95,
                            ) -> tuple[float, list[float]]:
    """Degenerate one-step env: reward equals the gate bit. Returns the
    final keep probability on the probe feature and its per-episode curve."""
    rng = Rng(seed, path=(24,))
    probe = np.full(FEATURE_DIM, 1.0 / math.sqrt(FEATURE_DIM))
    head = mlp_init(FEATURE_DIM, 1, rng.split(0))
    updater = _BatchedReinforce({"gate": head}, lr=lr, clip=clip,
                                batch_episodes=batch_episodes)
    baseline = _EmaBaseline(baseline_decay)
    curve: list[float] = []
    features = probe[None, :]
    for _ in range(num_episodes):
        logits, _ = mlp_forward(head, features)
        p = float(sigmoid(logits[0, 0]))
        bit = rng.bernoulli(p)
        reward = float(bit)
        scale = reinforce_scales([reward], baseline.value)
        baseline.update(reward)
        updater.add_episode({"gate": _gate_episode_grads(head, features,
                                                         [bit], scale)})
        curve.append(p)
    updater.flush()
    logits, _ = mlp_forward(head, features)
    return float(sigmoid(logits[0, 0])), curve


def bandit_action_probability(num_episodes: int, seed: int, lr: float = 1e-3,
                              batch_episodes: int = 8, clip: float = 5.0,
                              baseline_decay: float = 0.95) -> float:
    """Two-action softmax bandit: reward 1 for action 0. Returns the final
    probability of the rewarded action on the probe feature."""
    rng = Rng(seed, path=(25,))
    probe = np.full(FEATURE_DIM, 1.0 / math.sqrt(FEATURE_DIM))
    head = mlp_init(FEATURE_DIM, 2, rng.split(0))
    params = BackboneParams(head=head, frozen=False)
    updater = _BatchedReinforce({"action": head}, lr=lr, clip=clip,
                                batch_episodes=batch_episodes)
    baseline = _EmaBaseline(baseline_decay)
    features = probe[None, :]
    for _ in range(num_episodes):
        action, _, _ = act(probe, params, mode="sample", rng=rng)
        reward = 1.0 if action == 0 else 0.0
        scale = reinforce_scales([reward], baseline.value)
        baseline.update(reward)
        updater.add_episode({"action": _action_episode_grads(head, features,
                                                             [action], scale)})
    updater.flush()
    logits, _ = mlp_forward(head, features)
    return float(softmax(logits[0])[0])


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def save_dataset(path, samples) -> None:
    """One record per line: {episode_id, step, label, feature}."""
    lines = [json.dumps({"schema": DATASET_SCHEMA}, sort_keys=True)]
    for s in samples:
        lines.append(json.dumps({
            "episode_id": s.episode_id, "step": s.step_index,
            "label": s.label,
            "feature": [float(v) for v in s.features],
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> list[LabeledSample]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("schema") != DATASET_SCHEMA:
        raise DatasetError(f"{path}: expected schema {DATASET_SCHEMA}, "
                           f"got {header.get('schema')!r}")
    samples = []
    for line in lines[1:]:
        obj = json.loads(line)
        label = int(obj["label"])
        samples.append(LabeledSample(
            episode_id=obj["episode_id"], step_index=obj["step"],
            subset="", features=np.array(obj["feature"]),
            label=label, action_valid=bool(label), episode_success=bool(label),
        ))
    return samples
