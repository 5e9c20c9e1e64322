"""Scripted expert with full-state access.

The expert replans every step: resolve the goal's effective targets against
the true state, pick the cheapest remaining target by BFS action distance,
and emit the first action of a shortest plan. Pick legs are chosen jointly
with the following place leg, so single-object tasks are solved in the
minimum possible number of actions.
"""

from __future__ import annotations

from . import world
from .world import (
    DONE, Env, EpisodeConfig, GridState, Instruction,
    adjacent_cells, effective_target_sets, goal_candidates, goal_holds,
    nav_distances, nav_distances_to, first_action_towards, passable,
    pick_action, place_action,
)


def _pick_effect_chooses(state: GridState, cell: tuple[int, int], obj) -> bool:
    """Would a pick-up of obj.type issued from cell grab this instance?"""
    candidates = [o for o in state.objects
                  if o.type == obj.type and not o.carried
                  and max(abs(o.pos[0] - cell[0]), abs(o.pos[1] - cell[1])) <= 1]
    if not candidates:
        return False
    candidates.sort(key=lambda o: (max(abs(o.pos[0] - cell[0]), abs(o.pos[1] - cell[1])),
                                   o.pos[1], o.pos[0], o.object_id))
    return candidates[0].object_id == obj.object_id


def _pick_region(state: GridState, obj) -> set[tuple[int, int]]:
    return {c for c in adjacent_cells(state, obj.pos)
            if _pick_effect_chooses(state, c, obj)}


def _receptacle_region(state: GridState, rec_type: str | None) -> set[tuple[int, int]]:
    cells: set[tuple[int, int]] = set()
    for rec in state.receptacles:
        if rec_type is None or rec.type == rec_type:
            cells |= adjacent_cells(state, rec.pos)
    return cells


def _flag_visibility_region(state: GridState) -> set[tuple[int, int]]:
    """Passable cells from which a flagged receptacle would be visible."""
    cells: set[tuple[int, int]] = set()
    rho = state.view_radius
    for rec in state.receptacles:
        if f"{rec.type}_open" not in state.flags:
            continue
        rx, ry = rec.pos
        for dy in range(-rho, rho + 1):
            for dx in range(-rho, rho + 1):
                cell = (rx + dx, ry + dy)
                if passable(state, cell):
                    cells.add(cell)
    return cells


def expert_act(state: GridState, instruction: Instruction) -> int:
    goal = instruction.goal
    if goal_holds(state, goal):
        return DONE

    if goal.condition is not None and not state.flag_checked:
        # The instruction asks for the flagged receptacle to be checked, so
        # walk until it enters the field of view before committing to a
        # branch. Sighting it flips the persistent marker in the state.
        region = _flag_visibility_region(state)
        if region:
            action = first_action_towards(state, region)
            if action is not None:
                return action

    types, ids = effective_target_sets(state, goal)
    rec_cells = {r.pos for r in state.receptacles if r.type == goal.receptacle}
    place_region = _receptacle_region(state, goal.receptacle)
    carried = state.carried_object()

    if carried is not None:
        is_target = (carried.object_id in ids) if ids else (carried.type in types)
        if is_target:
            if state.agent_pos in place_region:
                return place_action(goal.receptacle)
            action = first_action_towards(state, place_region)
            return place_action(goal.receptacle) if action is None else action
        # Carrying something irrelevant: drop it on the nearest receptacle.
        any_region = _receptacle_region(state, None)
        if state.agent_pos in any_region:
            ax, ay = state.agent_pos
            near = min((r for r in state.receptacles
                        if max(abs(r.pos[0] - ax), abs(r.pos[1] - ay)) <= 1),
                       key=lambda r: (max(abs(r.pos[0] - ax), abs(r.pos[1] - ay)),
                                      r.pos[1], r.pos[0]))
            return place_action(near.type)
        action = first_action_towards(state, any_region)
        return DONE if action is None else action

    candidates = [o for o in goal_candidates(state, goal)
                  if not (not o.carried and o.pos in rec_cells)]
    if not candidates:
        return DONE

    from_here = nav_distances(state, (state.agent_pos, state.agent_facing))
    to_place = nav_distances_to(state, place_region)

    best = None  # (cost, object_id, goal_nodes)
    for obj in sorted(candidates, key=lambda o: o.object_id):
        region = _pick_region(state, obj)
        if not region:
            continue
        if state.agent_pos in region:
            return pick_action(obj.type)
        node_costs = []
        for cell in region:
            for facing in range(4):
                node = (cell, facing)
                if node in from_here and node in to_place:
                    node_costs.append((from_here[node] + to_place[node], node))
        if not node_costs:
            continue
        leg_cost = min(c for c, _ in node_costs)
        if best is None or (leg_cost, obj.object_id) < (best[0], best[1]):
            goal_nodes = {n for c, n in node_costs if c == leg_cost}
            best = (leg_cost, obj.object_id, goal_nodes)
    if best is None:
        return DONE
    action = first_action_towards(state, best[2])
    return DONE if action is None else action


def expert_rollout_length(config: EpisodeConfig) -> int | None:
    """Number of steps the expert needs to succeed, or None on failure."""
    env = Env(config)
    if env.task_success:
        return 0
    steps = 0
    while True:
        try:
            action = expert_act(env.state, env.instruction)
        except world.GenerationError:
            return None
        result = env.step(action)
        steps += 1
        if result.task_success:
            return steps
        if result.episode_over:
            return None
