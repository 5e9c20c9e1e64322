"""Evaluation harness: run episodes under different write-gate variants on
identical task lists, aggregate metrics, and compare agents pairwise.

Success, kept fraction (percent of steps written; complete memory reads
100), invalid-action counts, and weighted efficiency
W = success * (1 - kept/100) are computed per subset and aggregated. Paired
comparisons report exact-binomial sign tests over per-episode success
differences.
"""

from __future__ import annotations

import json
import math
from concurrent import futures
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from . import world
from .backbone import BackboneParams, act, embed, resolve_action, ResolutionError
from .expert import expert_act
from .gate import GateDecision, GateParams, gate_forward, heuristic_gate
from .hashing import bow_vector
from .memory import MemoryStore, kept_fraction, maybe_insert, retrieve, Context
from .world import ACTION_NAMES, GenParams

TRACE_SCHEMA = "trace-v1"
REPORT_SCHEMA = "report-v1"
COMPARE_SCHEMA = "compare-v1"

GATE_VARIANTS = ("none", "simple", "offline_supervised", "online_rl", "complete")


@dataclass
class AgentConfig:
    name: str
    variant: str  # one of GATE_VARIANTS
    h: int = 6
    backbone: BackboneParams | None = None  # None selects the expert policy
    gate: GateParams | None = None
    tau: float = 0.3
    decode: str = "by-id"  # or "by-name"

    def __post_init__(self):
        if self.variant not in GATE_VARIANTS:
            raise ValueError(f"unknown gate variant {self.variant!r}")
        if self.variant in ("offline_supervised", "online_rl") and self.gate is None:
            raise ValueError(f"variant {self.variant!r} needs gate parameters")
        if self.decode not in ("by-id", "by-name"):
            raise ValueError(f"unknown decode mode {self.decode!r}")


@dataclass
class EpisodeTrace:
    subset: str
    task_seed: int
    instruction: str
    records: list[dict]
    success: bool
    steps: int
    invalid_count: int
    kept_percent: float


def _gate_decision(agent: AgentConfig, features, store) -> GateDecision:
    if agent.variant == "none":
        return GateDecision(p_keep=0.0, bit=0)
    if agent.variant == "complete":
        return GateDecision(p_keep=1.0, bit=1)
    if agent.variant == "simple":
        return heuristic_gate(features, store, tau=agent.tau)
    return gate_forward(agent.gate, features, mode="threshold")


def run_episode(agent: AgentConfig, config: world.EpisodeConfig) -> EpisodeTrace:
    """Deterministic episode: greedy decoding and threshold gating."""
    env = world.Env(config)
    obs = world.observe(env.state)
    instr = env.instruction
    instr_vec = bow_vector(instr.text, 32)
    store = MemoryStore()
    records: list[dict] = []
    invalid = 0
    while not env.episode_over:
        if agent.variant == "none":
            ctx = Context(entries=(), budget=0)
        else:
            ctx = retrieve(store, instr_vec, agent.h)
        features = embed(obs, instr, ctx)
        if agent.backbone is None:
            action = expert_act(env.state, instr)
        else:
            action, _, _ = act(features, agent.backbone, mode="greedy")
        if agent.decode == "by-name":
            try:
                action = resolve_action(ACTION_NAMES[action])
            except ResolutionError:
                action = world.DONE
        decision = _gate_decision(agent, features, store)
        if agent.variant != "none":
            maybe_insert(store, obs, action, features, decision.bit)
        result = env.step(action)
        if not result.action_valid:
            invalid += 1
        records.append({
            "step": obs.step_index,
            "obs_summary": obs.state_summary,
            "action_id": action,
            "action_name": ACTION_NAMES[action],
            "action_valid": result.action_valid,
            "gate_p": round(decision.p_keep, 6),
            "gate_b": decision.bit,
            "reward": result.reward,
            "context_size": len(ctx.entries),
            "store_size": store.n,
        })
        obs = result.observation
    steps = env.state.step_count
    return EpisodeTrace(
        subset=instr.subset, task_seed=config.seed, instruction=instr.text,
        records=records, success=env.task_success, steps=steps,
        invalid_count=invalid,
        kept_percent=kept_fraction(store, steps) if agent.variant != "none" else 0.0,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def weighted_efficiency(success_pct: float, kept_pct: float) -> float:
    """W = success * (1 - kept/100); both inputs are percentages in [0, 100]."""
    for name, value in (("success", success_pct), ("kept", kept_pct)):
        if not 0.0 <= value <= 100.0:
            raise ValueError(f"{name} percentage out of range: {value}")
    return success_pct * (1.0 - kept_pct / 100.0)


def weighted_efficiency_aggregate(pairs) -> float:
    """Mean of per-suite W values, each computed from (success, kept)."""
    values = [weighted_efficiency(s, k) for s, k in pairs]
    if not values:
        raise ValueError("need at least one (success, kept) pair")
    return sum(values) / len(values)


@dataclass
class MetricsReport:
    agent: str
    seed: int
    per_subset: dict[str, dict]
    aggregate: dict
    episode_success: dict[str, list[bool]] = dc_field(default_factory=dict)

    def to_obj(self) -> dict:
        return {"agent": self.agent, "seed": self.seed,
                "per_subset": self.per_subset, "aggregate": self.aggregate,
                "episode_success": {k: [bool(b) for b in v]
                                    for k, v in self.episode_success.items()}}


def _subset_metrics(traces: list[EpisodeTrace]) -> dict:
    n = len(traces)
    success_pct = 100.0 * sum(t.success for t in traces) / n
    kept = sum(t.kept_percent for t in traces) / n
    invalid = sum(t.invalid_count for t in traces) / n
    return {
        "episodes": n,
        "success_rate": success_pct,
        "kept_fraction": kept,
        "invalid_actions": invalid,
        "weighted_efficiency": weighted_efficiency(success_pct, kept),
    }


def eval_task_list(subsets, episodes_per_subset: int, seed: int,
                   gen_params: GenParams = world.DEFAULT_GEN) -> dict[str, list]:
    """The evaluation task list depends only on (subsets, count, seed), so
    every agent sees identical episodes and comparisons pair cleanly."""
    tasks: dict[str, list] = {}
    for subset in subsets:
        tasks[subset] = [
            world.generate_task(subset, seed * 7919 + 1000 * i, gen_params)
            for i in range(episodes_per_subset)
        ]
    return tasks


def _episode_job(job: tuple[AgentConfig, world.EpisodeConfig]) -> EpisodeTrace:
    return run_episode(*job)


def _run_episodes(agent: AgentConfig, configs: list,
                  jobs: int = 1) -> list[EpisodeTrace]:
    """Episodes are independent and deterministic, so worker processes
    return the same traces in the same order as the serial path."""
    if jobs <= 1 or len(configs) <= 1:
        return [run_episode(agent, config) for config in configs]
    with futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_episode_job, [(agent, c) for c in configs]))


def evaluate(agent: AgentConfig, subsets, episodes_per_subset: int, seed: int,
             gen_params: GenParams = world.DEFAULT_GEN,
             tasks: dict[str, list] | None = None, jobs: int = 1,
             ) -> tuple[MetricsReport, dict[str, list[EpisodeTrace]]]:
    if tasks is None:
        tasks = eval_task_list(subsets, episodes_per_subset, seed, gen_params)
    per_subset = {}
    episode_success = {}
    all_traces: dict[str, list[EpisodeTrace]] = {}
    for subset in subsets:
        traces = _run_episodes(agent, tasks[subset], jobs)
        all_traces[subset] = traces
        per_subset[subset] = _subset_metrics(traces)
        episode_success[subset] = [t.success for t in traces]
    keys = ("success_rate", "kept_fraction", "invalid_actions",
            "weighted_efficiency")
    aggregate = {k: sum(per_subset[s][k] for s in subsets) / len(list(subsets))
                 for k in keys}
    aggregate["episodes"] = sum(per_subset[s]["episodes"] for s in subsets)
    report = MetricsReport(agent=agent.name, seed=seed, per_subset=per_subset,
                           aggregate=aggregate, episode_success=episode_success)
    return report, all_traces


# ---------------------------------------------------------------------------
# Paired comparison
# ---------------------------------------------------------------------------


def sign_test(wins: int, losses: int) -> dict:
    """Exact binomial sign test on discordant pairs (null: p = 0.5).

    Returns one-sided (greater) and two-sided p-values. With no discordant
    pairs both p-values are 1.
    """
    n = wins + losses
    if n == 0:
        return {"wins": 0, "losses": 0, "n": 0, "p_greater": 1.0, "p_two_sided": 1.0}
    def tail_ge(k):
        return sum(math.comb(n, i) for i in range(k, n + 1)) / 2.0 ** n
    p_greater = tail_ge(wins)
    p_lesser = sum(math.comb(n, i) for i in range(0, wins + 1)) / 2.0 ** n
    p_two = min(1.0, 2.0 * min(p_greater, p_lesser))
    return {"wins": wins, "losses": losses, "n": n,
            "p_greater": p_greater, "p_two_sided": p_two}


def paired_success_diff(report_a: MetricsReport, report_b: MetricsReport,
                        subsets=None) -> dict:
    """Per-episode success comparison of a over b on the pooled subsets."""
    subsets = list(subsets) if subsets is not None else sorted(report_a.episode_success)
    wins = losses = 0
    for subset in subsets:
        for sa, sb in zip(report_a.episode_success[subset],
                          report_b.episode_success[subset], strict=True):
            if sa and not sb:
                wins += 1
            elif sb and not sa:
                losses += 1
    out = sign_test(wins, losses)
    out["subsets"] = subsets
    out["success_a"] = {s: report_a.per_subset[s]["success_rate"] for s in subsets}
    out["success_b"] = {s: report_b.per_subset[s]["success_rate"] for s in subsets}
    return out


def compare(agents: list[AgentConfig], subsets, episodes_per_subset: int,
            seed: int, gen_params: GenParams = world.DEFAULT_GEN,
            jobs: int = 1) -> dict:
    """Evaluate every agent on one shared task list; all pairwise sign tests."""
    tasks = eval_task_list(subsets, episodes_per_subset, seed, gen_params)
    reports = {}
    for agent in agents:
        report, _ = evaluate(agent, subsets, episodes_per_subset, seed,
                             gen_params, tasks=tasks, jobs=jobs)
        reports[agent.name] = report
    pairwise = {}
    names = [a.name for a in agents]
    for a in names:
        for b in names:
            if a == b:
                continue
            pairwise[f"{a} vs {b}"] = paired_success_diff(reports[a], reports[b])
    return {
        "reports": {name: r.to_obj() for name, r in reports.items()},
        "pairwise": pairwise,
        "subsets": list(subsets),
        "episodes_per_subset": episodes_per_subset,
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# Trace files and replay
# ---------------------------------------------------------------------------


def trace_to_lines(trace: EpisodeTrace) -> list[str]:
    header = {"schema": TRACE_SCHEMA, "subset": trace.subset,
              "task_seed": trace.task_seed, "instruction": trace.instruction}
    footer = {"success": trace.success, "steps": trace.steps,
              "invalid_count": trace.invalid_count,
              "kept_percent": trace.kept_percent}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True) for r in trace.records]
    lines.append(json.dumps(footer, sort_keys=True))
    return lines


def save_traces(path, traces: list[EpisodeTrace]) -> None:
    lines: list[str] = []
    for trace in traces:
        lines.extend(trace_to_lines(trace))
    Path(path).write_text("\n".join(lines) + "\n")


def metrics_from_records(records: list[dict], success: bool, steps: int) -> dict:
    """Recompute the per-episode metrics from raw step records."""
    kept = sum(r["gate_b"] for r in records)
    invalid = sum(0 if r["action_valid"] else 1 for r in records)
    return {
        "success": success,
        "steps": steps,
        "invalid_count": invalid,
        "kept_percent": 100.0 * kept / steps if steps else 0.0,
    }


def render_table(report_objs: dict[str, dict], subsets) -> str:
    """Fixed-width text table: one row per agent x subset plus aggregates."""
    headers = ("agent", "subset", "episodes", "success%", "kept%", "invalid",
               "weighted")
    rows = [headers]
    for name in sorted(report_objs):
        obj = report_objs[name]
        for subset in list(subsets) + ["(aggregate)"]:
            source = (obj["aggregate"] if subset == "(aggregate)"
                      else obj["per_subset"][subset])
            rows.append((
                name, subset, str(source["episodes"]),
                f"{source['success_rate']:.1f}",
                f"{source['kept_fraction']:.1f}",
                f"{source['invalid_actions']:.2f}",
                f"{source['weighted_efficiency']:.2f}",
            ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    out = []
    for i, row in enumerate(rows):
        out.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)
