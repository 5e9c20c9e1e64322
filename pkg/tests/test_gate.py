"""Gate checks: learned sigmoid head in threshold and sample modes, the
novelty heuristic, and checkpoint portability of gate parameters."""

import math
from dataclasses import dataclass

import numpy as np
import pytest

from memgate.backbone import FEATURE_DIM
from memgate.checkpoint import load_head, save_head
from memgate.gate import GateDecision, GateParams, gate_forward, heuristic_gate
from memgate.memory import MemoryStore, maybe_insert
from memgate.nn import Rng, mlp_init, sigmoid


@dataclass
class FakeObs:
    step_index: int
    state_summary: str = "fake"


def bias_only_gate(logit, mode="offline_supervised", threshold=0.5, in_dim=4):
    head = {k: np.zeros_like(v) for k, v in mlp_init(in_dim, 1, Rng(0)).items()}
    head["b3"][0] = logit
    return GateParams(head=head, mode=mode, threshold=threshold)


def store_of(vectors):
    store = MemoryStore()
    for i, vec in enumerate(vectors):
        maybe_insert(store, FakeObs(step_index=i), 0, np.asarray(vec, float), 1)
    return store


# ---------------------------------------------------------------------------
# Learned gate
# ---------------------------------------------------------------------------


def test_zero_parameters_give_half_probability_and_keep():
    decision = gate_forward(bias_only_gate(0.0), np.zeros(4))
    assert decision.p_keep == 0.5
    assert decision.bit == 1  # threshold comparison is inclusive
    assert decision.log_prob is None


def test_threshold_mode_respects_custom_threshold():
    params = bias_only_gate(0.0, threshold=0.6)
    assert gate_forward(params, np.zeros(4)).bit == 0
    assert gate_forward(params, np.ones(4)).p_keep == 0.5


def test_probability_matches_sigmoid_of_manual_logit():
    for logit in (-3.0, -0.4, 0.0, 0.9, 5.0):
        decision = gate_forward(bias_only_gate(logit), np.zeros(4))
        assert decision.p_keep == pytest.approx(1.0 / (1.0 + math.exp(-logit)),
                                                abs=1e-12)
        assert decision.bit == int(decision.p_keep >= 0.5)


def test_probability_depends_on_features_through_head():
    rng = Rng(11)
    head = mlp_init(6, 1, rng)
    params = GateParams(head=head, mode="online_rl")
    x = rng.normal(6)
    h1 = np.tanh(x @ head["w1"] + head["b1"])
    h2 = np.tanh(h1 @ head["w2"] + head["b2"])
    logit = float((h2 @ head["w3"] + head["b3"])[0])
    assert gate_forward(params, x).p_keep == pytest.approx(
        float(sigmoid(logit)), abs=1e-12)


def test_sample_mode_keep_rate_tracks_probability():
    logit = math.log(0.7 / 0.3)  # sigmoid(logit) = 0.7
    params = bias_only_gate(logit)
    rng = Rng(7)
    draws = 100_000
    kept = sum(gate_forward(params, np.zeros(4), mode="sample", rng=rng).bit
               for _ in range(draws))
    assert kept / draws == pytest.approx(0.7, abs=0.01)


def test_sample_mode_log_prob_matches_drawn_bit():
    params = bias_only_gate(0.8)
    p = float(sigmoid(0.8))
    rng = Rng(8)
    seen = set()
    for _ in range(200):
        decision = gate_forward(params, np.zeros(4), mode="sample", rng=rng)
        seen.add(decision.bit)
        expect = p if decision.bit else 1.0 - p
        assert decision.log_prob == pytest.approx(math.log(expect), abs=1e-12)
    assert seen == {0, 1}


def test_sample_mode_requires_rng():
    with pytest.raises(ValueError):
        gate_forward(bias_only_gate(0.0), np.zeros(4), mode="sample")


def test_unknown_forward_mode_rejected():
    with pytest.raises(ValueError):
        gate_forward(bias_only_gate(0.0), np.zeros(4), mode="argmax")


def test_gate_params_reject_unknown_mode():
    head = mlp_init(4, 1, Rng(0))
    with pytest.raises(ValueError):
        GateParams(head=head, mode="bayesian")


# ---------------------------------------------------------------------------
# Novelty heuristic
# ---------------------------------------------------------------------------


def test_heuristic_empty_store_always_keeps():
    decision = heuristic_gate(np.array([0.0, 0.0]), MemoryStore(), tau=0.3)
    assert decision == GateDecision(p_keep=1.0, bit=1)


def test_heuristic_exact_repeat_dropped():
    store = store_of([[1.0, 2.0, 3.0]])
    decision = heuristic_gate(np.array([1.0, 2.0, 3.0]), store, tau=0.3)
    assert decision.p_keep == pytest.approx(0.0, abs=1e-12)
    assert decision.bit == 0


def test_heuristic_novelty_is_one_minus_best_cosine():
    # cosine([1,0],[0.6,0.8]) = 0.6, so novelty 0.4 passes tau = 0.3.
    store = store_of([[1.0, 0.0]])
    decision = heuristic_gate(np.array([0.6, 0.8]), store, tau=0.3)
    assert decision.p_keep == pytest.approx(0.4, abs=1e-12)
    assert decision.bit == 1
    assert heuristic_gate(np.array([0.6, 0.8]), store, tau=0.45).bit == 0


def test_heuristic_scores_against_most_similar_entry():
    store = store_of([[1.0, 0.0], [0.0, 1.0]])
    decision = heuristic_gate(np.array([0.0, 5.0]), store, tau=0.3)
    assert decision.p_keep == pytest.approx(0.0, abs=1e-12)
    assert decision.bit == 0


def test_heuristic_tau_zero_keeps_everything():
    store = store_of([[1.0, 0.0]])
    assert heuristic_gate(np.array([1.0, 0.0]), store, tau=0.0).bit == 1
    assert heuristic_gate(np.array([0.0, 1.0]), store, tau=0.0).bit == 1


def test_heuristic_tau_above_one_keeps_only_first():
    store = MemoryStore()
    kept = []
    rng = Rng(9)
    for step in range(20):
        vec = rng.normal(8)
        bit = heuristic_gate(vec, store, tau=1.5).bit
        kept.append(bit)
        maybe_insert(store, FakeObs(step_index=step), 0, vec, bit)
    assert kept == [1] + [0] * 19


def test_heuristic_clamps_novelty_into_unit_interval():
    # Opposite vectors have cosine -1; novelty is clamped to 1, not 2.
    store = store_of([[1.0, 0.0]])
    decision = heuristic_gate(np.array([-1.0, 0.0]), store, tau=0.3)
    assert decision.p_keep == 1.0
    assert decision.bit == 1


# ---------------------------------------------------------------------------
# Checkpoint portability
# ---------------------------------------------------------------------------


def test_gate_survives_checkpoint_round_trip(tmp_path):
    rng = Rng(12)
    head = mlp_init(FEATURE_DIM, 1, rng)
    params = GateParams(head=head, mode="offline_supervised")
    path = tmp_path / "gate.ckpt"
    save_head(path, head, "offline_supervised")
    loaded_head, mode = load_head(path)
    assert mode == "offline_supervised"
    reloaded = GateParams(head=loaded_head, mode=mode)
    for _ in range(20):
        x = rng.normal(FEATURE_DIM)
        assert gate_forward(reloaded, x).p_keep == pytest.approx(
            gate_forward(params, x).p_keep, abs=1e-12)


def test_gate_checkpoint_preserves_training_mode_tag(tmp_path):
    head = mlp_init(8, 1, Rng(1))
    for mode in ("simple", "offline_supervised", "online_rl"):
        path = tmp_path / f"{mode}.ckpt"
        save_head(path, head, mode)
        _, loaded_mode = load_head(path)
        assert loaded_mode == mode
