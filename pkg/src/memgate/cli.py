"""Command-line pipeline: generate tasks, collect labeled rollouts, clone
the action head, train gates offline or online, evaluate, and compare.

Every artifact is line-delimited text whose first line is a schema/version
record (checkpoints carry their version in the binary header), and every
command writes a sidecar manifest with the resolved configuration so the
same artifact can be reproduced byte-for-byte via --config <manifest>.

Exit codes: 0 success, 2 usage or configuration error, 3 missing or
malformed input file, 4 checkpoint or dimension mismatch, 5 numeric failure
(non-finite values), 6 generation or dataset failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import harness, train, world
from .backbone import FEATURE_DIM, BackboneParams
from .checkpoint import CheckpointError, load_head, save_head
from .gate import GateParams
from .nn import NumericError
from .train import CorruptionSpec, DatasetError
from .world import GenerationError, SUBSETS, SUITE_PRESETS

TASKS_SCHEMA = "tasks-v1"
CURVE_SCHEMA = "curve-v1"
MANIFEST_SCHEMA = "manifest-v1"


class ConfigError(ValueError):
    """Raised for unknown keys or out-of-range configuration values."""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    suite: str = "default"
    width: int | None = None
    height: int | None = None
    view_radius: int | None = None
    max_steps: int | None = None
    d: int = 128
    h: int = 6
    tau: float = 0.3
    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 32
    collect_episodes: int = 900
    bc_episodes: int = 400
    bc_epochs: int = 40
    online_episodes: int = 3000
    gamma: float = 0.99
    clip_norm: float = 5.0
    baseline_decay: float = 0.95
    batch_episodes: int = 8
    invalid_penalty: float = 0.0
    corruption_fraction: float = 0.3
    corruption_eps: float = 0.25
    corruption_mode: str = "random"
    corruption_burst: int = 12
    finetune_action_head: bool = True
    decode: str = "by-id"

    def __post_init__(self):
        if self.d != FEATURE_DIM:
            raise ConfigError(f"d must be {FEATURE_DIM} (fixed block layout)")
        if self.suite not in SUITE_PRESETS:
            raise ConfigError(f"unknown suite {self.suite!r}; "
                              f"choose from {sorted(SUITE_PRESETS)}")
        if self.corruption_mode not in ("random", "dwell", "stuck"):
            raise ConfigError(f"unknown corruption mode {self.corruption_mode!r}")
        if self.decode not in ("by-id", "by-name"):
            raise ConfigError(f"unknown decode mode {self.decode!r}")
        if not 0.0 <= self.corruption_fraction <= 1.0:
            raise ConfigError("corruption_fraction must lie in [0, 1]")
        if self.corruption_burst < 1:
            raise ConfigError("corruption_burst must be >= 1")
        if self.h < 0:
            raise ConfigError("h must be >= 0")

    def gen_params(self) -> world.GenParams:
        preset = SUITE_PRESETS[self.suite]
        overrides = {}
        for field in ("width", "height", "view_radius", "max_steps"):
            value = getattr(self, field)
            if value is not None:
                overrides[field] = value
        return replace(preset, **overrides) if overrides else preset

    def corruption(self) -> CorruptionSpec:
        return CorruptionSpec(fraction=self.corruption_fraction,
                              eps=self.corruption_eps,
                              mode=self.corruption_mode,
                              burst=self.corruption_burst)


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def load_config_file(path) -> tuple[dict, dict]:
    """Read a config or manifest file; returns (config dict, saved args)."""
    text = Path(path).read_text()
    lines = text.splitlines()
    first = json.loads(lines[0]) if lines else {}
    if isinstance(first, dict) and first.get("schema") == MANIFEST_SCHEMA:
        body = json.loads(lines[1])
        return body["config"], body.get("args", {})
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return obj, {}


def build_config(config_obj: dict, seed_override: int | None) -> RunConfig:
    unknown = set(config_obj) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        config = RunConfig(**config_obj)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if seed_override is not None:
        config = replace(config, seed=seed_override)
    return config


def write_lines(path, lines) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def write_manifest(out_path, command: str, args: dict, config: RunConfig) -> None:
    body = {"command": command, "args": args,
            "config": dataclasses.asdict(config)}
    write_lines(str(out_path) + ".manifest.json", [
        json.dumps({"schema": MANIFEST_SCHEMA}, sort_keys=True),
        json.dumps(body, sort_keys=True),
    ])


def _curve_lines(curve: list[dict]) -> list[str]:
    lines = [json.dumps({"schema": CURVE_SCHEMA}, sort_keys=True)]
    lines += [json.dumps(row, sort_keys=True) for row in curve]
    return lines


def _parse_subsets(raw: str) -> list[str]:
    subsets = [s.strip() for s in raw.split(",") if s.strip()]
    for subset in subsets:
        if subset not in SUBSETS:
            raise ConfigError(f"unknown subset {subset!r}; "
                              f"choose from {list(SUBSETS)}")
    return subsets


def _load_backbone(path) -> BackboneParams:
    head, mode = load_head(path)
    if mode != "backbone":
        raise CheckpointError(f"{path}: expected a backbone checkpoint, "
                              f"found mode {mode!r}")
    if head["w1"].shape[0] != FEATURE_DIM:
        raise CheckpointError(f"{path}: input width {head['w1'].shape[0]} "
                              f"does not match feature dim {FEATURE_DIM}")
    return BackboneParams(head=head, frozen=True)


def _load_gate(path) -> GateParams:
    head, mode = load_head(path)
    if mode not in ("offline_supervised", "online_rl"):
        raise CheckpointError(f"{path}: expected a gate checkpoint, "
                              f"found mode {mode!r}")
    return GateParams(head=head, mode=mode)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_tasks(args, config: RunConfig) -> int:
    subset = args.subset
    if subset not in SUBSETS:
        raise ConfigError(f"unknown subset {subset!r}")
    params = config.gen_params()
    lines = []
    if args.count > 0:
        lines.append(json.dumps({"schema": TASKS_SCHEMA}, sort_keys=True))
    for i in range(args.count):
        task = world.generate_task(subset, train._task_seed(config.seed, i), params)
        lines.append(json.dumps(world.config_to_obj(task), sort_keys=True))
    write_lines(args.out, lines)
    write_manifest(args.out, "gen-tasks",
                   {"subset": subset, "count": args.count, "out": args.out},
                   config)
    print(f"wrote {args.count} {subset} tasks to {args.out}")
    return 0


def cmd_collect(args, config: RunConfig) -> int:
    subsets = _parse_subsets(args.subsets)
    count = args.count if args.count is not None else config.collect_episodes
    samples = train.collect_expert_dataset(
        count, subsets, config.seed, h=config.h,
        gen_params=config.gen_params(), corruption=config.corruption())
    train.save_dataset(args.out, samples)
    write_manifest(args.out, "collect",
                   {"subsets": args.subsets, "count": count,
                    "out": args.out}, config)
    negatives = sum(1 for s in samples if s.label == 0)
    print(f"wrote {len(samples)} samples ({negatives} negative) to {args.out}")
    return 0


def cmd_clone_backbone(args, config: RunConfig) -> int:
    subsets = _parse_subsets(args.subsets)
    params, history = train.clone_action_head(
        config.bc_episodes, subsets, config.seed, h=config.h,
        gen_params=config.gen_params(), epochs=config.bc_epochs,
        lr=config.lr, batch_size=config.batch_size)
    save_head(args.out, params.head, "backbone")
    write_lines(str(args.out) + ".curve.jsonl", _curve_lines(history))
    write_manifest(args.out, "clone-backbone",
                   {"subsets": args.subsets, "out": args.out}, config)
    print(f"cloned action head: accuracy {history[-1]['accuracy']:.3f}, "
          f"wrote {args.out}")
    return 0


def cmd_train_offline(args, config: RunConfig) -> int:
    samples = train.load_dataset(args.data)
    balanced = train.balance_dataset(samples, config.seed)
    gate, history = train.train_offline(
        balanced, config.epochs, config.seed, lr=config.lr,
        batch_size=config.batch_size)
    save_head(args.out, gate.head, gate.mode)
    write_lines(str(args.out) + ".curve.jsonl", _curve_lines(history))
    write_manifest(args.out, "train-offline",
                   {"data": args.data, "out": args.out}, config)
    print(f"trained offline gate: accuracy {history[-1]['accuracy']:.3f}, "
          f"wrote {args.out}")
    return 0


def cmd_train_online(args, config: RunConfig) -> int:
    backbone = _load_backbone(args.backbone)
    subsets = _parse_subsets(args.subsets)
    gate, head, curve = train.train_online(
        config.online_episodes, subsets, config.seed, backbone, h=config.h,
        gen_params=config.gen_params(), gamma=config.gamma, lr=config.lr,
        clip=config.clip_norm, baseline_decay=config.baseline_decay,
        batch_episodes=config.batch_episodes,
        invalid_penalty=config.invalid_penalty,
        finetune_action_head=config.finetune_action_head)
    save_head(args.out, gate.head, gate.mode)
    action_out = args.action_out or str(args.out) + ".action"
    if config.finetune_action_head:
        save_head(action_out, head.head, "backbone")
    write_lines(str(args.out) + ".curve.jsonl", _curve_lines(curve))
    write_manifest(args.out, "train-online",
                   {"backbone": args.backbone, "subsets": args.subsets,
                    "out": args.out, "action_out": args.action_out}, config)
    recent = curve[-200:]
    rate = sum(1 for row in recent if row["success"]) / len(recent)
    print(f"trained online gate over {len(curve)} episodes "
          f"(recent success {rate:.2f}), wrote {args.out}")
    return 0


def _build_agent(name: str, variant: str, config: RunConfig,
                 backbone_path, gate_path) -> harness.AgentConfig:
    backbone = _load_backbone(backbone_path) if backbone_path else None
    gate = _load_gate(gate_path) if gate_path else None
    return harness.AgentConfig(name=name, variant=variant, h=config.h,
                               backbone=backbone, gate=gate, tau=config.tau,
                               decode=config.decode)


def cmd_eval(args, config: RunConfig) -> int:
    subsets = _parse_subsets(args.subsets)
    agent = _build_agent(args.name or args.variant, args.variant, config,
                         args.backbone, args.gate)
    report, traces = harness.evaluate(
        agent, subsets, args.count, config.seed,
        gen_params=config.gen_params(), jobs=args.jobs)
    write_lines(args.out, [
        json.dumps({"schema": harness.REPORT_SCHEMA}, sort_keys=True),
        json.dumps(report.to_obj(), sort_keys=True),
    ])
    if args.traces:
        flat = [t for subset in subsets for t in traces[subset]]
        harness.save_traces(args.traces, flat)
    write_manifest(args.out, "eval",
                   {"variant": args.variant, "name": args.name,
                    "backbone": args.backbone, "gate": args.gate,
                    "subsets": args.subsets, "count": args.count,
                    "out": args.out, "traces": args.traces,
                    "jobs": args.jobs}, config)
    print(harness.render_table({report.agent: report.to_obj()}, subsets))
    return 0


def cmd_compare(args, config: RunConfig) -> int:
    subsets = _parse_subsets(args.subsets)
    agents = [
        _build_agent("none", "none", config, args.backbone, None),
        _build_agent("simple", "simple", config, args.backbone, None),
        _build_agent("complete", "complete", config, args.backbone, None),
    ]
    if args.offline_gate:
        agents.append(_build_agent("offline", "offline_supervised", config,
                                   args.backbone, args.offline_gate))
    if args.online_gate:
        backbone = args.online_backbone or args.backbone
        agents.append(_build_agent("online", "online_rl", config,
                                   backbone, args.online_gate))
    result = harness.compare(agents, subsets, args.count, config.seed,
                             gen_params=config.gen_params(), jobs=args.jobs)
    write_lines(args.out, [
        json.dumps({"schema": harness.COMPARE_SCHEMA}, sort_keys=True),
        json.dumps(result, sort_keys=True),
    ])
    write_manifest(args.out, "compare",
                   {"backbone": args.backbone,
                    "offline_gate": args.offline_gate,
                    "online_gate": args.online_gate,
                    "online_backbone": args.online_backbone,
                    "subsets": args.subsets, "count": args.count,
                    "out": args.out, "jobs": args.jobs}, config)
    print(harness.render_table(result["reports"], subsets))
    for pair, stats in sorted(result["pairwise"].items()):
        print(f"{pair}: wins {stats['wins']} losses {stats['losses']} "
              f"p_greater {stats['p_greater']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memgate",
        description="Write-gated episodic memory for a gridworld agent.",
        epilog=("exit codes: 0 ok, 2 usage/config error, 3 bad input file, "
                "4 checkpoint mismatch, 5 numeric failure, "
                "6 generation/dataset failure"),
    )
    parser.add_argument("--config", help="JSON config or a manifest to rerun")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default=None, help="artifact output path")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel episode workers for eval/compare")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tasks", help="write a task file for one subset")
    p.add_argument("--subset", choices=SUBSETS)
    p.add_argument("--count", type=int)
    p.add_argument("--out", default=argparse.SUPPRESS)

    p = sub.add_parser("collect", help="collect a labeled gate dataset")
    p.add_argument("--count", type=int)
    p.add_argument("--subsets")
    p.add_argument("--out", default=argparse.SUPPRESS)

    p = sub.add_parser("clone-backbone",
                       help="behavior-clone the expert into an action head")
    p.add_argument("--subsets")
    p.add_argument("--out", default=argparse.SUPPRESS)

    p = sub.add_parser("train-offline", help="train the gate on a dataset")
    p.add_argument("--data")
    p.add_argument("--out", default=argparse.SUPPRESS)

    p = sub.add_parser("train-online", help="train the gate with REINFORCE")
    p.add_argument("--backbone")
    p.add_argument("--subsets")
    p.add_argument("--out", default=argparse.SUPPRESS)
    p.add_argument("--action-out",
                   help="where to write the finetuned action head")

    p = sub.add_parser("eval", help="evaluate one agent variant")
    p.add_argument("--variant", choices=harness.GATE_VARIANTS)
    p.add_argument("--name")
    p.add_argument("--backbone",
                   help="action-head checkpoint; omit for the scripted expert")
    p.add_argument("--gate")
    p.add_argument("--subsets")
    p.add_argument("--count", type=int)
    p.add_argument("--out", default=argparse.SUPPRESS)
    p.add_argument("--traces")

    p = sub.add_parser("compare", help="paired comparison of gate variants")
    p.add_argument("--backbone")
    p.add_argument("--offline-gate")
    p.add_argument("--online-gate")
    p.add_argument("--online-backbone",
                   help="finetuned action head for the online agent")
    p.add_argument("--subsets")
    p.add_argument("--count", type=int)
    p.add_argument("--out", default=argparse.SUPPRESS)
    return parser


_ALL_SUBSETS = ",".join(SUBSETS)

# Per-command defaults applied after CLI args and manifest args; None marks
# an argument that must be supplied one way or the other.
_ARG_DEFAULTS = {
    "gen-tasks": {"subset": None, "count": None, "out": None},
    "collect": {"count": None, "subsets": _ALL_SUBSETS, "out": None},
    "clone-backbone": {"subsets": _ALL_SUBSETS, "out": None},
    "train-offline": {"data": None, "out": None},
    "train-online": {"backbone": None, "subsets": "long,complex",
                     "out": None, "action_out": None},
    "eval": {"variant": None, "name": None, "backbone": None, "gate": None,
             "subsets": _ALL_SUBSETS, "count": 20, "out": None,
             "traces": None},
    "compare": {"backbone": None, "offline_gate": None, "online_gate": None,
                "online_backbone": None, "subsets": "long,complex",
                "count": 50, "out": None},
}

# Arguments that may legitimately stay None after defaulting.
_REQUIRED_EXEMPT = {
    "collect": {"count"},  # falls back to config.collect_episodes
    "eval": {"name", "backbone", "gate", "traces"},
    "compare": {"offline_gate", "online_gate", "online_backbone"},
    "train-online": {"action_out"},
}


def _resolve_args(args, saved_args: dict) -> None:
    """Fill unset command arguments from the manifest, then from defaults."""
    defaults = _ARG_DEFAULTS[args.command]
    for name, default in defaults.items():
        if getattr(args, name, None) is not None:
            continue
        saved = saved_args.get(name)
        value = saved if saved is not None else default
        setattr(args, name, value)
    exempt = _REQUIRED_EXEMPT.get(args.command, set())
    missing = [name for name, default in defaults.items()
               if default is None and name not in exempt
               and getattr(args, name) is None]
    if missing:
        flags = ", ".join("--" + name.replace("_", "-") for name in missing)
        raise ConfigError(f"{args.command} requires {flags}")


_COMMANDS = {
    "gen-tasks": cmd_gen_tasks,
    "collect": cmd_collect,
    "clone-backbone": cmd_clone_backbone,
    "train-offline": cmd_train_offline,
    "train-online": cmd_train_online,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config_obj, saved_args = ({}, {})
        if args.config:
            config_obj, saved_args = load_config_file(args.config)
        _resolve_args(args, saved_args)
        config = build_config(config_obj, args.seed)
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (json.JSONDecodeError, KeyError) as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except (GenerationError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
