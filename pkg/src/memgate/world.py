"""Partially observable gridworld with move-and-place tasks.

The world is a rectangular grid. The agent has a position and a facing, sees
the contents of cells within a Chebyshev view radius, can carry at most one
object, and acts through a fixed discrete action table: move forward, turn
left, turn right, one pick-up action per object type, one place action per
receptacle type, and done. Invalid actions consume a timestep with the state
frozen. Receptacle cells block movement; objects do not.

Tasks come in five families:

* base     - move one named object to a named receptacle
* common   - the target is named by category ("fruit"), any member counts
* complex  - a state flag picks between two targets, plus an irrelevant clause
* spatial  - two same-type instances, a relative-position clause picks one
* long     - move every instance of a type (k >= 2); success only when all are placed

Every task carries a machine-checkable goal description, so success never
depends on parsing instruction text.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field

from .nn import Rng

# ---------------------------------------------------------------------------
# Vocabulary and action table
# ---------------------------------------------------------------------------

OBJECT_TYPES = ("pear", "apple", "bowl", "plate", "hammer", "wrench", "spoon", "cup")
RECEPTACLE_TYPES = ("sofa", "table", "counter", "sink", "fridge", "bed")

CATEGORIES = {
    "fruit": ("pear", "apple"),
    "dish": ("bowl", "plate"),
    "tool": ("hammer", "wrench"),
}

FACINGS = ("north", "east", "south", "west")
_DELTAS = ((0, -1), (1, 0), (0, 1), (-1, 0))

MOVE_FORWARD = 0
TURN_LEFT = 1
TURN_RIGHT = 2
PICK_BASE = 3
PLACE_BASE = PICK_BASE + len(OBJECT_TYPES)
DONE = PLACE_BASE + len(RECEPTACLE_TYPES)
NUM_ACTIONS = DONE + 1

ACTION_NAMES = (
    ("move forward", "turn left", "turn right")
    + tuple(f"pick up the {t}" for t in OBJECT_TYPES)
    + tuple(f"place on the {t}" for t in RECEPTACLE_TYPES)
    + ("done",)
)


def pick_action(object_type: str) -> int:
    return PICK_BASE + OBJECT_TYPES.index(object_type)


def place_action(receptacle_type: str) -> int:
    return PLACE_BASE + RECEPTACLE_TYPES.index(receptacle_type)


class EnvUsageError(RuntimeError):
    """Raised when the environment API is driven incorrectly."""


class GenerationError(RuntimeError):
    """Raised when the task generator exhausts its retry budget."""


# ---------------------------------------------------------------------------
# State, goals, configs
# ---------------------------------------------------------------------------


@dataclass
class ObjectState:
    object_id: str
    type: str
    pos: tuple[int, int]
    carried: bool = False


@dataclass
class ReceptacleState:
    type: str
    pos: tuple[int, int]


@dataclass
class GridState:
    width: int
    height: int
    view_radius: int
    max_steps: int
    agent_pos: tuple[int, int]
    agent_facing: int
    objects: list[ObjectState]
    receptacles: list[ReceptacleState]
    flags: dict[str, bool] = field(default_factory=dict)
    step_count: int = 0
    # Task bookkeeping, not exposed to observations: set once a flagged
    # receptacle has been inside the field of view.
    flag_checked: bool = False

    def carried_object(self) -> ObjectState | None:
        for obj in self.objects:
            if obj.carried:
                return obj
        return None


@dataclass(frozen=True)
class Condition:
    flag: str
    then_types: tuple[str, ...]
    else_types: tuple[str, ...]


@dataclass(frozen=True)
class GoalSpec:
    receptacle: str
    quantifier: str  # "one" or "all"
    target_types: tuple[str, ...] = ()
    target_ids: tuple[str, ...] = ()
    condition: Condition | None = None

    def __post_init__(self):
        if self.quantifier not in ("one", "all"):
            raise ValueError(f"unknown quantifier {self.quantifier!r}")
        if self.receptacle not in RECEPTACLE_TYPES:
            raise ValueError(f"unknown receptacle type {self.receptacle!r}")
        if not (self.target_types or self.target_ids or self.condition):
            raise ValueError("goal needs target types, ids, or a condition")


@dataclass(frozen=True)
class Instruction:
    text: str
    subset: str
    goal: GoalSpec


@dataclass(frozen=True)
class EpisodeConfig:
    width: int
    height: int
    view_radius: int
    max_steps: int
    agent_pos: tuple[int, int]
    agent_facing: int
    objects: tuple[tuple[str, str, tuple[int, int]], ...]  # (id, type, pos)
    receptacles: tuple[tuple[str, tuple[int, int]], ...]  # (type, pos)
    flags: tuple[tuple[str, bool], ...]
    instruction: Instruction
    seed: int


def effective_target_sets(state: GridState, goal: GoalSpec) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Resolve the goal's condition against state flags; returns (types, ids)."""
    if goal.condition is not None:
        cond = goal.condition
        branch = cond.then_types if state.flags.get(cond.flag, False) else cond.else_types
        return branch, goal.target_ids
    return goal.target_types, goal.target_ids


def goal_candidates(state: GridState, goal: GoalSpec) -> list[ObjectState]:
    types, ids = effective_target_sets(state, goal)
    if ids:
        wanted = set(ids)
        return [o for o in state.objects if o.object_id in wanted]
    return [o for o in state.objects if o.type in types]


def goal_holds(state: GridState, goal: GoalSpec) -> bool:
    if goal.condition is not None:
        # Conditional goals are only satisfied once the flagged receptacle
        # has actually been observed; finishing blind does not count.
        if not state.flag_checked:
            return False
        types, ids = effective_target_sets(state, goal)
        if not types and not ids:
            return True
    candidates = goal_candidates(state, goal)
    if not candidates:
        return False
    rec_cells = {r.pos for r in state.receptacles if r.type == goal.receptacle}
    placed = [o for o in candidates if not o.carried and o.pos in rec_cells]
    if goal.quantifier == "one":
        return len(placed) >= 1
    return len(placed) == len(candidates)


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Observation:
    visible_cells: tuple[dict, ...]
    state_summary: str
    step_index: int
    width: int
    height: int
    view_radius: int
    max_steps: int


def _visible_records(state: GridState) -> list[dict]:
    ax, ay = state.agent_pos
    rho = state.view_radius
    records: list[dict] = []
    carried = state.carried_object()
    records.append({
        "kind": "agent", "x": ax, "y": ay,
        "facing": FACINGS[state.agent_facing],
        "carried": carried.type if carried else None,
    })
    for dy in range(-rho, rho + 1):
        for dx in range(-rho, rho + 1):
            x, y = ax + dx, ay + dy
            if not (0 <= x < state.width and 0 <= y < state.height):
                records.append({"kind": "wall", "x": x, "y": y})
    for obj in state.objects:
        if obj.carried:
            continue
        if max(abs(obj.pos[0] - ax), abs(obj.pos[1] - ay)) <= rho:
            records.append({"kind": "object", "x": obj.pos[0], "y": obj.pos[1],
                            "name": obj.type, "id": obj.object_id})
    for rec in state.receptacles:
        if max(abs(rec.pos[0] - ax), abs(rec.pos[1] - ay)) <= rho:
            record = {"kind": "receptacle", "x": rec.pos[0], "y": rec.pos[1],
                      "name": rec.type}
            flag_key = f"{rec.type}_open"
            if flag_key in state.flags:
                record["detail"] = "open" if state.flags[flag_key] else "closed"
            records.append(record)
    records.sort(key=lambda r: (r["y"], r["x"], r["kind"], r.get("name", "")))
    return records


def render_summary(visible_cells) -> str:
    """Deterministic one-line text naming what is in view.

    Only content words appear (object and receptacle names, door details,
    the carried item), so hashed comparisons against instruction text
    measure topical overlap instead of being swamped by coordinates and
    boilerplate; positions and layout live in the numeric feature vector
    instead.
    """
    agent = next(r for r in visible_cells if r["kind"] == "agent")
    parts = []
    for r in visible_cells:
        if r["kind"] == "object":
            parts.append(r["name"])
        elif r["kind"] == "receptacle":
            detail = f" {r['detail']}" if "detail" in r else ""
            parts.append(f"{r['name']}{detail}")
    if agent["carried"]:
        parts.append(f"carrying {agent['carried']}")
    return "; ".join(parts)


def observe(state: GridState) -> Observation:
    records = tuple(_visible_records(state))
    return Observation(
        visible_cells=records,
        state_summary=render_summary(records),
        step_index=state.step_count,
        width=state.width,
        height=state.height,
        view_radius=state.view_radius,
        max_steps=state.max_steps,
    )


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    action_valid: bool
    task_success: bool
    episode_over: bool


def _forward_cell(state: GridState) -> tuple[int, int]:
    dx, dy = _DELTAS[state.agent_facing]
    return state.agent_pos[0] + dx, state.agent_pos[1] + dy


def flagged_receptacle_in_view(state: GridState) -> bool:
    """True when a receptacle carrying a state flag is currently visible."""
    ax, ay = state.agent_pos
    for rec in state.receptacles:
        if f"{rec.type}_open" not in state.flags:
            continue
        if max(abs(rec.pos[0] - ax), abs(rec.pos[1] - ay)) <= state.view_radius:
            return True
    return False


def passable(state: GridState, cell: tuple[int, int]) -> bool:
    x, y = cell
    if not (0 <= x < state.width and 0 <= y < state.height):
        return False
    return all(r.pos != cell for r in state.receptacles)


def _pick_candidates(state: GridState, object_type: str) -> list[ObjectState]:
    ax, ay = state.agent_pos
    found = [o for o in state.objects
             if o.type == object_type and not o.carried
             and max(abs(o.pos[0] - ax), abs(o.pos[1] - ay)) <= 1]
    found.sort(key=lambda o: (max(abs(o.pos[0] - ax), abs(o.pos[1] - ay)),
                              o.pos[1], o.pos[0], o.object_id))
    return found


def _place_candidates(state: GridState, receptacle_type: str) -> list[ReceptacleState]:
    ax, ay = state.agent_pos
    found = [r for r in state.receptacles
             if r.type == receptacle_type
             and max(abs(r.pos[0] - ax), abs(r.pos[1] - ay)) <= 1]
    found.sort(key=lambda r: (max(abs(r.pos[0] - ax), abs(r.pos[1] - ay)),
                              r.pos[1], r.pos[0]))
    return found


def action_valid(state: GridState, action: int) -> bool:
    if action == MOVE_FORWARD:
        return passable(state, _forward_cell(state))
    if action in (TURN_LEFT, TURN_RIGHT, DONE):
        return True
    if PICK_BASE <= action < PLACE_BASE:
        if state.carried_object() is not None:
            return False
        return bool(_pick_candidates(state, OBJECT_TYPES[action - PICK_BASE]))
    if PLACE_BASE <= action < DONE:
        if state.carried_object() is None:
            return False
        return bool(_place_candidates(state, RECEPTACLE_TYPES[action - PLACE_BASE]))
    raise ValueError(f"unknown action id {action}")


class Env:
    """A single episode. Construct from an EpisodeConfig, then step."""

    def __init__(self, config: EpisodeConfig):
        self.config = config
        self.reset()

    def reset(self) -> Observation:
        cfg = self.config
        self.state = GridState(
            width=cfg.width, height=cfg.height, view_radius=cfg.view_radius,
            max_steps=cfg.max_steps, agent_pos=tuple(cfg.agent_pos),
            agent_facing=cfg.agent_facing,
            objects=[ObjectState(i, t, tuple(p)) for i, t, p in cfg.objects],
            receptacles=[ReceptacleState(t, tuple(p)) for t, p in cfg.receptacles],
            flags=dict(cfg.flags),
        )
        self.instruction = cfg.instruction
        self.episode_over = False
        self.task_success = goal_holds(self.state, self.instruction.goal)
        self.state.flag_checked = flagged_receptacle_in_view(self.state)
        return observe(self.state)

    def valid_actions(self) -> frozenset[int]:
        return frozenset(a for a in range(NUM_ACTIONS) if action_valid(self.state, a))

    def clone(self) -> "Env":
        return copy.deepcopy(self)

    def step(self, action: int) -> StepResult:
        if self.episode_over:
            raise EnvUsageError("step() called on a finished episode")
        if not 0 <= action < NUM_ACTIONS:
            raise ValueError(f"unknown action id {action}")
        state = self.state
        valid = action_valid(state, action)
        done_issued = action == DONE
        if valid and not done_issued:
            self._apply(action)
        state.step_count += 1
        if not state.flag_checked and flagged_receptacle_in_view(state):
            state.flag_checked = True
        reward = 0.0
        if not self.task_success and goal_holds(state, self.instruction.goal):
            self.task_success = True
            reward = 1.0
        if done_issued:
            self.task_success = goal_holds(state, self.instruction.goal)
        self.episode_over = (
            self.task_success or done_issued or state.step_count >= state.max_steps
        )
        return StepResult(
            observation=observe(state),
            reward=reward,
            action_valid=valid,
            task_success=self.task_success,
            episode_over=self.episode_over,
        )

    def _apply(self, action: int) -> None:
        state = self.state
        if action == MOVE_FORWARD:
            state.agent_pos = _forward_cell(state)
        elif action == TURN_LEFT:
            state.agent_facing = (state.agent_facing - 1) % 4
        elif action == TURN_RIGHT:
            state.agent_facing = (state.agent_facing + 1) % 4
        elif PICK_BASE <= action < PLACE_BASE:
            target = _pick_candidates(state, OBJECT_TYPES[action - PICK_BASE])[0]
            target.carried = True
            target.pos = state.agent_pos
        elif PLACE_BASE <= action < DONE:
            rec = _place_candidates(state, RECEPTACLE_TYPES[action - PLACE_BASE])[0]
            carried = state.carried_object()
            carried.carried = False
            carried.pos = rec.pos


def reset(config: EpisodeConfig) -> tuple[Env, Observation]:
    env = Env(config)
    return env, observe(env.state)


# ---------------------------------------------------------------------------
# Navigation search (shared by the expert oracle)
# ---------------------------------------------------------------------------


def nav_distances(state: GridState, start: tuple[tuple[int, int], int]) -> dict:
    """BFS action-distance from a (pos, facing) node to every reachable node."""
    dist = {start: 0}
    queue = deque([start])
    while queue:
        (pos, facing) = queue.popleft()
        d = dist[(pos, facing)]
        dx, dy = _DELTAS[facing]
        nxt = (pos[0] + dx, pos[1] + dy)
        neighbors = []
        if passable(state, nxt):
            neighbors.append((nxt, facing))
        neighbors.append((pos, (facing - 1) % 4))
        neighbors.append((pos, (facing + 1) % 4))
        for node in neighbors:
            if node not in dist:
                dist[node] = d + 1
                queue.append(node)
    return dist


def nav_distances_to(state: GridState, goal_cells: set[tuple[int, int]]) -> dict:
    """Reverse BFS: action-distance from every (pos, facing) node to the goal
    region (any facing). Forward moves reverse to backward moves; turns are
    symmetric."""
    dist: dict = {}
    queue: deque = deque()
    for cell in goal_cells:
        if passable(state, cell):
            for facing in range(4):
                node = (cell, facing)
                dist[node] = 0
                queue.append(node)
    while queue:
        (pos, facing) = queue.popleft()
        d = dist[(pos, facing)]
        dx, dy = _DELTAS[facing]
        back = (pos[0] - dx, pos[1] - dy)
        preds = []
        if passable(state, back):
            preds.append((back, facing))
        preds.append((pos, (facing - 1) % 4))
        preds.append((pos, (facing + 1) % 4))
        for node in preds:
            if node not in dist:
                dist[node] = d + 1
                queue.append(node)
    return dist


def first_action_towards(state: GridState, goal_nodes: set) -> int | None:
    """First action of a shortest action path to any goal (pos, facing) node.

    Goal nodes may also be bare cells, meaning any facing is acceptable.
    Returns None when the start already satisfies the goal, and raises
    GenerationError when no goal node is reachable.
    """
    expanded: set = set()
    for node in goal_nodes:
        if isinstance(node[0], tuple):
            expanded.add(node)
        else:
            for facing in range(4):
                expanded.add((node, facing))
    start = (state.agent_pos, state.agent_facing)
    if start in expanded:
        return None
    dist = {start: (0, None)}
    queue = deque([start])
    while queue:
        (pos, facing) = queue.popleft()
        d, first = dist[(pos, facing)]
        dx, dy = _DELTAS[facing]
        nxt = (pos[0] + dx, pos[1] + dy)
        steps = []
        if passable(state, nxt):
            steps.append(((nxt, facing), MOVE_FORWARD))
        steps.append(((pos, (facing - 1) % 4), TURN_LEFT))
        steps.append(((pos, (facing + 1) % 4), TURN_RIGHT))
        for node, action in steps:
            if node in dist:
                continue
            carried_first = first if first is not None else action
            dist[node] = (d + 1, carried_first)
            if node in expanded:
                return carried_first
            queue.append(node)
    raise GenerationError("goal region unreachable")


def adjacent_cells(state: GridState, cell: tuple[int, int]) -> set[tuple[int, int]]:
    """Passable cells within Chebyshev distance 1 of cell (including itself)."""
    x, y = cell
    out = set()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            c = (x + dx, y + dy)
            if passable(state, c):
                out.add(c)
    return out


# ---------------------------------------------------------------------------
# Task generation
# ---------------------------------------------------------------------------

SUBSETS = ("base", "common", "complex", "spatial", "long")


@dataclass(frozen=True)
class GenParams:
    width: int = 9
    height: int = 9
    view_radius: int = 2
    max_steps: int = 40
    distractor_objects: tuple[int, int] = (2, 4)  # inclusive range
    extra_receptacles: tuple[int, int] = (1, 2)
    long_count: int = 3
    min_plan: int = 6
    max_plan_fraction: float = 0.75
    retries: int = 300


DEFAULT_GEN = GenParams()

SUITE_PRESETS = {
    "default": DEFAULT_GEN,
    "nav-heavy": GenParams(width=11, height=11, max_steps=48,
                           distractor_objects=(1, 2), extra_receptacles=(1, 1),
                           min_plan=10),
    "manip-heavy": GenParams(width=8, height=8, max_steps=36,
                             distractor_objects=(4, 6), extra_receptacles=(2, 3),
                             min_plan=5),
}

_BASE_TEMPLATES = (
    "Move one of the {obj} items to the indicated {rec}.",
    "Take a {obj} and put it on the {rec}.",
    "Carry one {obj} over to the {rec}.",
)
_COMMON_TEMPLATES = (
    "Move a {cat} to the {rec}.",
    "Find any {cat} and place it on the {rec}.",
)
_COMPLEX_TEMPLATE = (
    "If the fridge door stands open, take a {then} and set the {then} on"
    " the {rec}; with the door closed, the {rec} stays empty, so simply"
    " finish."
)
_IRRELEVANT_CLAUSES = (
    " The walls were painted last week.",
    " There is no need to hurry.",
    " Someone left the lights on earlier.",
)
_SPATIAL_TEMPLATE = "Move the {obj} nearest to the {landmark} onto the {rec}."
_LONG_TEMPLATE = "Move all {count} {obj} items to the {rec}."

_SUBSET_STREAM = {name: 100 + i for i, name in enumerate(SUBSETS)}


def _free_cells(width, height, used):
    return [(x, y) for y in range(height) for x in range(width) if (x, y) not in used]


def _scatter(rng: Rng, width, height, used: set, count: int) -> list[tuple[int, int]]:
    cells = _free_cells(width, height, used)
    if len(cells) < count:
        raise GenerationError("grid too small for layout")
    out = []
    for _ in range(count):
        cell = cells.pop(rng.integers(0, len(cells)))
        used.add(cell)
        out.append(cell)
    return out


def _attempt(subset: str, rng: Rng, params: GenParams, seed: int) -> EpisodeConfig:
    width, height = params.width, params.height
    used: set[tuple[int, int]] = set()
    objects: list[tuple[str, str, tuple[int, int]]] = []
    receptacles: list[tuple[str, tuple[int, int]]] = []
    flags: list[tuple[str, bool]] = []
    counters: dict[str, int] = {}

    def add_object(obj_type: str) -> str:
        idx = counters.get(obj_type, 0)
        counters[obj_type] = idx + 1
        pos = _scatter(rng, width, height, used, 1)[0]
        obj_id = f"{obj_type}_{idx}"
        objects.append((obj_id, obj_type, pos))
        return obj_id

    def add_receptacle(rec_type: str) -> tuple[int, int]:
        pos = _scatter(rng, width, height, used, 1)[0]
        receptacles.append((rec_type, pos))
        return pos

    def far_cell(anchor: tuple[int, int]) -> tuple[int, int]:
        cells = _free_cells(width, height, used)
        if not cells:
            raise GenerationError("grid too small for layout")
        best = max(abs(c[0] - anchor[0]) + abs(c[1] - anchor[1]) for c in cells)
        candidates = [c for c in cells
                      if abs(c[0] - anchor[0]) + abs(c[1] - anchor[1]) >= 0.7 * best]
        pos = candidates[rng.integers(0, len(candidates))]
        used.add(pos)
        return pos

    target_rec = rng.choice([t for t in RECEPTACLE_TYPES if t != "fridge"])
    target_pos = add_receptacle(target_rec)

    if subset == "base":
        obj_type = rng.choice(OBJECT_TYPES)
        add_object(obj_type)
        goal = GoalSpec(receptacle=target_rec, quantifier="one",
                        target_types=(obj_type,))
        text = rng.choice(_BASE_TEMPLATES).format(obj=obj_type, rec=target_rec)
        distract_pool = [t for t in OBJECT_TYPES if t != obj_type]
    elif subset == "common":
        category = rng.choice(sorted(CATEGORIES))
        members = CATEGORIES[category]
        for _ in range(2):
            add_object(rng.choice(members))
        goal = GoalSpec(receptacle=target_rec, quantifier="one",
                        target_types=members)
        text = rng.choice(_COMMON_TEMPLATES).format(cat=category, rec=target_rec)
        distract_pool = [t for t in OBJECT_TYPES if t not in members]
    elif subset == "complex":
        then_type = rng.choice(OBJECT_TYPES)
        other_type = rng.choice([t for t in OBJECT_TYPES if t != then_type])
        # The fridge sits across the room from the drop-off receptacle, and
        # the conditional object spawns away from the fridge, so acting on
        # the door state happens well outside the fridge's field of view.
        fridge_pos = far_cell(target_pos)
        receptacles.append(("fridge", fridge_pos))
        obj_pos = far_cell(fridge_pos)
        objects.append((f"{then_type}_0", then_type, obj_pos))
        counters[then_type] = 1
        add_object(other_type)
        flags.append(("fridge_open", rng.random() < 0.5))
        goal = GoalSpec(receptacle=target_rec, quantifier="one",
                        condition=Condition("fridge_open", (then_type,), ()))
        text = _COMPLEX_TEMPLATE.format(then=then_type, rec=target_rec)
        text += rng.choice(_IRRELEVANT_CLAUSES)
        distract_pool = [t for t in OBJECT_TYPES
                         if t not in (then_type, other_type)]
    elif subset == "spatial":
        obj_type = rng.choice(OBJECT_TYPES)
        landmark = rng.choice([t for t in RECEPTACLE_TYPES
                               if t not in (target_rec,)])
        landmark_pos = add_receptacle(landmark)
        ids = [add_object(obj_type) for _ in range(2)]
        by_id = {i: p for i, _, p in objects}
        dists = [abs(by_id[i][0] - landmark_pos[0]) + abs(by_id[i][1] - landmark_pos[1])
                 for i in ids]
        if abs(dists[0] - dists[1]) < 2:
            raise GenerationError("spatial instances not separable")
        target_id = ids[0] if dists[0] < dists[1] else ids[1]
        goal = GoalSpec(receptacle=target_rec, quantifier="one",
                        target_ids=(target_id,))
        text = _SPATIAL_TEMPLATE.format(obj=obj_type, landmark=landmark,
                                        rec=target_rec)
        distract_pool = [t for t in OBJECT_TYPES if t != obj_type]
    elif subset == "long":
        obj_type = rng.choice(OBJECT_TYPES)
        count = max(2, params.long_count)
        for _ in range(count):
            add_object(obj_type)
        goal = GoalSpec(receptacle=target_rec, quantifier="all",
                        target_types=(obj_type,))
        text = _LONG_TEMPLATE.format(count=count, obj=obj_type, rec=target_rec)
        distract_pool = [t for t in OBJECT_TYPES if t != obj_type]
    else:
        raise ValueError(f"unknown subset {subset!r}")

    for _ in range(rng.integers(params.extra_receptacles[0],
                                params.extra_receptacles[1] + 1)):
        pool = [t for t in RECEPTACLE_TYPES
                if t != "fridge" and all(r[0] != t for r in receptacles)]
        if not pool:
            break
        add_receptacle(rng.choice(pool))
    for _ in range(rng.integers(params.distractor_objects[0],
                                params.distractor_objects[1] + 1)):
        if not distract_pool:
            break
        add_object(rng.choice(distract_pool))

    agent_pos = _scatter(rng, width, height, used, 1)[0]
    return EpisodeConfig(
        width=width, height=height, view_radius=params.view_radius,
        max_steps=params.max_steps, agent_pos=agent_pos,
        agent_facing=rng.integers(0, 4),
        objects=tuple(objects), receptacles=tuple(receptacles),
        flags=tuple(flags),
        instruction=Instruction(text=text, subset=subset, goal=goal),
        seed=seed,
    )


def generate_task(subset: str, seed: int, params: GenParams = DEFAULT_GEN) -> EpisodeConfig:
    """Deterministically generate a solvable episode for (subset, seed).

    Candidate layouts are rejected until the expert oracle solves one within
    the plan-length window; the retry budget turns pathological layouts into
    GenerationError instead of hangs.
    """
    from .expert import expert_rollout_length

    if subset not in SUBSETS:
        raise ValueError(f"unknown subset {subset!r}; expected one of {SUBSETS}")
    rng = Rng(seed, path=(_SUBSET_STREAM[subset],))
    for _ in range(params.retries):
        try:
            config = _attempt(subset, rng, params, seed)
        except GenerationError:
            continue
        plan_len = expert_rollout_length(config)
        if plan_len is None:
            continue
        if params.min_plan <= plan_len <= params.max_plan_fraction * params.max_steps:
            return config
    raise GenerationError(f"no solvable layout for {subset!r} seed {seed}")


# ---------------------------------------------------------------------------
# Config serialization
# ---------------------------------------------------------------------------


def config_to_obj(config: EpisodeConfig) -> dict:
    goal = config.instruction.goal
    goal_obj = {
        "receptacle": goal.receptacle,
        "quantifier": goal.quantifier,
        "target_types": list(goal.target_types),
        "target_ids": list(goal.target_ids),
        "condition": None if goal.condition is None else {
            "flag": goal.condition.flag,
            "then_types": list(goal.condition.then_types),
            "else_types": list(goal.condition.else_types),
        },
    }
    return {
        "width": config.width, "height": config.height,
        "view_radius": config.view_radius, "max_steps": config.max_steps,
        "agent_pos": list(config.agent_pos), "agent_facing": config.agent_facing,
        "objects": [[i, t, list(p)] for i, t, p in config.objects],
        "receptacles": [[t, list(p)] for t, p in config.receptacles],
        "flags": [[k, v] for k, v in config.flags],
        "instruction": {"text": config.instruction.text,
                        "subset": config.instruction.subset,
                        "goal": goal_obj},
        "seed": config.seed,
    }


def config_from_obj(obj: dict) -> EpisodeConfig:
    goal_obj = obj["instruction"]["goal"]
    condition = None
    if goal_obj.get("condition"):
        c = goal_obj["condition"]
        condition = Condition(c["flag"], tuple(c["then_types"]), tuple(c["else_types"]))
    goal = GoalSpec(
        receptacle=goal_obj["receptacle"], quantifier=goal_obj["quantifier"],
        target_types=tuple(goal_obj["target_types"]),
        target_ids=tuple(goal_obj["target_ids"]), condition=condition,
    )
    instruction = Instruction(text=obj["instruction"]["text"],
                              subset=obj["instruction"]["subset"], goal=goal)
    return EpisodeConfig(
        width=obj["width"], height=obj["height"],
        view_radius=obj["view_radius"], max_steps=obj["max_steps"],
        agent_pos=tuple(obj["agent_pos"]), agent_facing=obj["agent_facing"],
        objects=tuple((i, t, tuple(p)) for i, t, p in obj["objects"]),
        receptacles=tuple((t, tuple(p)) for t, p in obj["receptacles"]),
        flags=tuple((k, bool(v)) for k, v in obj["flags"]),
        instruction=instruction, seed=obj["seed"],
    )
