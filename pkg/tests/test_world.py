"""Gridworld checks: step mechanics against clone-and-step oracles, goal
predicates against brute-force enumeration, reward timing, observation
visibility bounds, and the task generator's per-family structure.
"""

import itertools

import pytest

from memgate import world
from memgate.expert import expert_act, expert_rollout_length
from memgate.world import (
    ACTION_NAMES, CATEGORIES, DONE, MOVE_FORWARD, NUM_ACTIONS, OBJECT_TYPES,
    PLACE_BASE, RECEPTACLE_TYPES, TURN_LEFT, TURN_RIGHT,
    Condition, Env, EnvUsageError, EpisodeConfig, GoalSpec, GridState,
    Instruction, ObjectState, ReceptacleState, config_from_obj, config_to_obj,
    generate_task, goal_holds, observe, pick_action, place_action, reset,
)
from memgate.nn import Rng


def simple_goal(receptacle="sofa", quantifier="one", target_types=("pear",)):
    return GoalSpec(receptacle=receptacle, quantifier=quantifier,
                    target_types=target_types)


def make_config(width=5, height=5, view_radius=1, max_steps=30,
                agent_pos=(2, 2), agent_facing=1,
                objects=(("pear_0", "pear", (1, 1)),),
                receptacles=(("sofa", (4, 4)),),
                flags=(), goal=None, subset="base", text="Take a pear and put it on the sofa."):
    goal = goal or simple_goal()
    return EpisodeConfig(
        width=width, height=height, view_radius=view_radius,
        max_steps=max_steps, agent_pos=agent_pos, agent_facing=agent_facing,
        objects=tuple(objects), receptacles=tuple(receptacles),
        flags=tuple(flags),
        instruction=Instruction(text=text, subset=subset, goal=goal),
        seed=0,
    )


# ---------------------------------------------------------------------------
# Action table
# ---------------------------------------------------------------------------


def test_action_ids_contiguous_and_names_unique():
    assert NUM_ACTIONS == 3 + len(OBJECT_TYPES) + len(RECEPTACLE_TYPES) + 1
    assert len(ACTION_NAMES) == NUM_ACTIONS
    assert len(set(ACTION_NAMES)) == NUM_ACTIONS
    assert ACTION_NAMES[MOVE_FORWARD] == "move forward"
    assert ACTION_NAMES[DONE] == "done"
    assert ACTION_NAMES[pick_action("hammer")] == "pick up the hammer"
    assert ACTION_NAMES[place_action("sink")] == "place on the sink"


# ---------------------------------------------------------------------------
# Reset and observation
# ---------------------------------------------------------------------------


def test_reset_twice_identical_observation():
    config = make_config()
    _, obs_a = reset(config)
    _, obs_b = reset(config)
    assert obs_a == obs_b


def test_agent_cell_always_visible():
    env, obs = reset(make_config())
    agent = [r for r in obs.visible_cells if r["kind"] == "agent"]
    assert len(agent) == 1
    assert (agent[0]["x"], agent[0]["y"]) == (2, 2)


def test_small_grid_radius_one_visible_record_bound():
    for agent_pos in [(2, 2), (0, 0), (4, 4), (0, 3)]:
        config = make_config(agent_pos=agent_pos)
        _, obs = reset(config)
        assert len(obs.visible_cells) <= 9


def test_objects_outside_view_ball_never_visible():
    config = make_config(objects=(("pear_0", "pear", (1, 1)),
                                  ("cup_0", "cup", (4, 0))))
    env = Env(config)
    rng = Rng(0)
    for _ in range(60):
        obs = observe(env.state)
        ax, ay = env.state.agent_pos
        rho = env.state.view_radius
        for record in obs.visible_cells:
            if record["kind"] == "object":
                assert max(abs(record["x"] - ax), abs(record["y"] - ay)) <= rho
        action = rng.choice([MOVE_FORWARD, TURN_LEFT, TURN_RIGHT])
        if env.step(action).episode_over:
            break


def test_carried_object_not_listed_as_grid_object():
    config = make_config(agent_pos=(1, 2), objects=(("pear_0", "pear", (1, 1)),))
    env = Env(config)
    env.step(pick_action("pear"))
    obs = observe(env.state)
    assert all(r["kind"] != "object" for r in obs.visible_cells)
    agent = next(r for r in obs.visible_cells if r["kind"] == "agent")
    assert agent["carried"] == "pear"
    assert "carrying pear" in obs.state_summary


def test_summary_names_visible_entities_and_nothing_else():
    config = make_config(agent_pos=(3, 3), view_radius=2,
                         objects=(("cup_0", "cup", (2, 3)),),
                         receptacles=(("sofa", (4, 4)),))
    _, obs = reset(config)
    assert "cup" in obs.state_summary
    assert "sofa" in obs.state_summary
    # Coordinates, facing and wall boilerplate stay out of the text so that
    # hashed word overlap with an instruction reflects topic, not geometry.
    assert not any(ch.isdigit() for ch in obs.state_summary)
    assert "wall" not in obs.state_summary
    assert "facing" not in obs.state_summary


def test_summary_empty_when_nothing_is_in_view():
    config = make_config(agent_pos=(3, 3), view_radius=1,
                         objects=(("cup_0", "cup", (0, 0)),),
                         receptacles=(("sofa", (4, 0)),),
                         goal=simple_goal(receptacle="sofa"))
    _, obs = reset(config)
    assert obs.state_summary == ""


def test_flagged_receptacle_summary_shows_door_state():
    config = make_config(agent_pos=(3, 3), view_radius=2,
                         receptacles=(("fridge", (4, 4)), ("sofa", (0, 0))),
                         flags=(("fridge_open", True),),
                         goal=simple_goal(receptacle="sofa"))
    _, obs = reset(config)
    assert "fridge open" in obs.state_summary


# ---------------------------------------------------------------------------
# Step mechanics
# ---------------------------------------------------------------------------


def test_move_into_wall_invalid_and_frozen():
    config = make_config(agent_pos=(4, 2), agent_facing=1)  # facing east wall
    env = Env(config)
    result = env.step(MOVE_FORWARD)
    assert not result.action_valid
    assert env.state.agent_pos == (4, 2)
    assert env.state.step_count == 1


def test_move_into_receptacle_blocked():
    config = make_config(agent_pos=(3, 4), agent_facing=1,
                         receptacles=(("sofa", (4, 4)),))
    env = Env(config)
    result = env.step(MOVE_FORWARD)
    assert not result.action_valid
    assert env.state.agent_pos == (3, 4)


def test_pick_with_no_matching_adjacent_object_invalid():
    config = make_config()
    env = Env(config)
    result = env.step(pick_action("spoon"))
    assert not result.action_valid


def test_pick_then_place_completes_task_with_reward():
    config = make_config(agent_pos=(3, 4), objects=(("pear_0", "pear", (3, 3)),),
                         receptacles=(("sofa", (4, 4)),))
    env = Env(config)
    r1 = env.step(pick_action("pear"))
    assert r1.action_valid and r1.reward == 0.0 and not r1.episode_over
    assert env.state.carried_object().object_id == "pear_0"
    r2 = env.step(place_action("sofa"))
    assert r2.action_valid
    assert r2.reward == 1.0
    assert r2.task_success and r2.episode_over
    pear = env.state.objects[0]
    assert pear.pos == (4, 4) and not pear.carried


def test_carried_object_excluded_from_goal():
    state = GridState(width=5, height=5, view_radius=1, max_steps=10,
                      agent_pos=(4, 3), agent_facing=0,
                      objects=[ObjectState("pear_0", "pear", (4, 4), carried=True)],
                      receptacles=[ReceptacleState("sofa", (4, 4))])
    assert not goal_holds(state, simple_goal())


def test_done_ends_episode_without_success():
    env = Env(make_config())
    result = env.step(DONE)
    assert result.action_valid
    assert result.episode_over and not result.task_success
    with pytest.raises(EnvUsageError):
        env.step(DONE)


def test_step_limit_ends_episode():
    env = Env(make_config(max_steps=3))
    env.step(TURN_LEFT)
    env.step(TURN_LEFT)
    result = env.step(TURN_LEFT)
    assert result.episode_over and not result.task_success


def test_invalid_actions_consume_time():
    env = Env(make_config(max_steps=2))
    env.step(pick_action("spoon"))
    result = env.step(pick_action("spoon"))
    assert result.episode_over


def test_determinism_same_actions_same_results():
    config = generate_task("base", 123)
    rng = Rng(5)
    actions = [rng.integers(0, NUM_ACTIONS) for _ in range(25)]

    def run():
        env = Env(config)
        trail = []
        for action in actions:
            result = env.step(action)
            trail.append((result.observation.state_summary, result.reward,
                          result.action_valid, result.task_success,
                          result.episode_over))
            if result.episode_over:
                break
        return trail

    assert run() == run()


# ---------------------------------------------------------------------------
# valid_actions against a clone-and-step oracle
# ---------------------------------------------------------------------------


def test_valid_actions_agree_with_cloned_step_outcomes():
    checked = 0
    for seed in range(4):
        config = generate_task("common", 500 + seed)
        env = Env(config)
        rng = Rng(seed)
        while not env.episode_over:
            valid_set = env.valid_actions()
            for action in range(NUM_ACTIONS):
                probe = env.clone()
                result = probe.step(action)
                assert (action in valid_set) == result.action_valid
                checked += 1
            # Mostly follow the expert so picks and places get exercised.
            if rng.random() < 0.7:
                action = expert_act(env.state, env.instruction)
            else:
                action = rng.integers(0, NUM_ACTIONS)
            env.step(action)
    assert checked >= 5 * NUM_ACTIONS


def test_place_actions_require_carrying():
    env = Env(make_config())
    valid = env.valid_actions()
    assert all(a not in valid for a in range(PLACE_BASE, DONE))


def test_turns_and_done_always_valid():
    env = Env(make_config())
    valid = env.valid_actions()
    assert {TURN_LEFT, TURN_RIGHT, DONE} <= set(valid)


# ---------------------------------------------------------------------------
# Goal predicate brute force
# ---------------------------------------------------------------------------


def test_move_all_goal_over_every_placement_combination():
    rec_pos = (4, 4)
    for placed_mask in itertools.product([False, True], repeat=3):
        objects = []
        for i, placed in enumerate(placed_mask):
            pos = rec_pos if placed else (i, 0)
            objects.append(ObjectState(f"plate_{i}", "plate", pos))
        state = GridState(width=5, height=5, view_radius=1, max_steps=10,
                          agent_pos=(2, 2), agent_facing=0, objects=objects,
                          receptacles=[ReceptacleState("bed", rec_pos)])
        goal_all = GoalSpec(receptacle="bed", quantifier="all",
                            target_types=("plate",))
        goal_one = GoalSpec(receptacle="bed", quantifier="one",
                            target_types=("plate",))
        assert goal_holds(state, goal_all) == all(placed_mask)
        assert goal_holds(state, goal_one) == any(placed_mask)


def test_conditional_goal_follows_flag():
    goal = GoalSpec(receptacle="sofa", quantifier="one",
                    condition=Condition("fridge_open", ("bowl",), ("hammer",)))
    for flag, placed_type, expect in [
        (True, "bowl", True), (True, "hammer", False),
        (False, "hammer", True), (False, "bowl", False),
    ]:
        state = GridState(width=5, height=5, view_radius=1, max_steps=10,
                          agent_pos=(0, 0), agent_facing=0,
                          objects=[ObjectState("x_0", placed_type, (4, 4))],
                          receptacles=[ReceptacleState("sofa", (4, 4))],
                          flags={"fridge_open": flag}, flag_checked=True)
        assert goal_holds(state, goal) == expect


def test_conditional_goal_requires_the_flag_to_have_been_seen():
    goal = GoalSpec(receptacle="sofa", quantifier="one",
                    condition=Condition("fridge_open", ("bowl",), ("hammer",)))
    state = GridState(width=5, height=5, view_radius=1, max_steps=10,
                      agent_pos=(0, 0), agent_facing=0,
                      objects=[ObjectState("x_0", "bowl", (4, 4))],
                      receptacles=[ReceptacleState("sofa", (4, 4))],
                      flags={"fridge_open": True}, flag_checked=False)
    assert goal_holds(state, goal) is False
    state.flag_checked = True
    assert goal_holds(state, goal) is True


def test_conditional_goal_with_empty_branch_is_vacuous_once_checked():
    goal = GoalSpec(receptacle="sofa", quantifier="one",
                    condition=Condition("fridge_open", ("bowl",), ()))
    state = GridState(width=5, height=5, view_radius=1, max_steps=10,
                      agent_pos=(0, 0), agent_facing=0,
                      objects=[ObjectState("x_0", "bowl", (0, 4))],
                      receptacles=[ReceptacleState("sofa", (4, 4))],
                      flags={"fridge_open": False}, flag_checked=True)
    assert goal_holds(state, goal) is True
    state.flags["fridge_open"] = True
    assert goal_holds(state, goal) is False


def test_reward_fires_exactly_when_final_instance_placed():
    for seed in range(3):
        config = generate_task("long", 900 + seed)
        goal = config.instruction.goal
        k = len([o for o in config.objects if o[1] in goal.target_types])
        assert k >= 2
        env = Env(config)

        def placed_count():
            rec_cells = {r.pos for r in env.state.receptacles
                         if r.type == goal.receptacle}
            return sum(1 for o in env.state.objects
                       if o.type in goal.target_types
                       and not o.carried and o.pos in rec_cells)

        rewards = []
        counts = [placed_count()]
        while not env.episode_over:
            action = expert_act(env.state, env.instruction)
            result = env.step(action)
            rewards.append(result.reward)
            counts.append(placed_count())
        assert result.task_success
        assert sum(rewards) == 1.0
        # Placement progress never regresses, and the single reward lands on
        # the step where the count first reaches k.
        assert all(b >= a for a, b in zip(counts, counts[1:]))
        first_full = next(i for i, c in enumerate(counts) if c == k)
        assert rewards[first_full - 1] == 1.0
        assert all(r == 0.0 for i, r in enumerate(rewards) if i != first_full - 1)


# ---------------------------------------------------------------------------
# Generator structure per family
# ---------------------------------------------------------------------------


def test_generate_deterministic_per_seed():
    for subset in world.SUBSETS:
        assert generate_task(subset, 77) == generate_task(subset, 77)
    assert generate_task("base", 77) != generate_task("base", 78)


def test_generated_tasks_solvable_within_budget():
    for subset in world.SUBSETS:
        for seed in range(3):
            config = generate_task(subset, 2000 + seed)
            steps = expert_rollout_length(config)
            assert steps is not None
            assert steps <= config.max_steps


def test_base_task_structure():
    config = generate_task("base", 7)
    goal = config.instruction.goal
    assert goal.quantifier == "one"
    assert len(goal.target_types) == 1
    obj_type = goal.target_types[0]
    assert obj_type in OBJECT_TYPES
    assert obj_type in config.instruction.text
    assert goal.receptacle in config.instruction.text
    assert any(o[1] == obj_type for o in config.objects)


def test_common_task_names_category_not_member():
    for seed in range(5):
        config = generate_task("common", 300 + seed)
        goal = config.instruction.goal
        category = next(c for c, members in CATEGORIES.items()
                        if tuple(members) == goal.target_types)
        assert category in config.instruction.text
        for member in goal.target_types:
            assert member not in config.instruction.text
        members_present = [o for o in config.objects if o[1] in goal.target_types]
        assert len(members_present) >= 2


def test_complex_task_has_condition_and_irrelevant_clause():
    config = generate_task("complex", 3)
    goal = config.instruction.goal
    assert goal.condition is not None
    assert goal.condition.flag == "fridge_open"
    assert "fridge door stands open" in config.instruction.text
    assert "door closed" in config.instruction.text
    assert any(t == "fridge" for t, _ in config.receptacles)
    assert dict(config.flags).get("fridge_open") in (True, False)
    # The trailing clause adds text with no goal-relevant vocabulary.
    tail = config.instruction.text.split(".")[-2] + "."
    relevant = set(goal.condition.then_types) | set(goal.condition.else_types)
    assert not any(word in tail for word in relevant | {goal.receptacle})


def test_spatial_task_disambiguates_by_landmark_distance():
    for seed in range(5):
        config = generate_task("spatial", 400 + seed)
        goal = config.instruction.goal
        assert len(goal.target_ids) == 1
        target_id = goal.target_ids[0]
        target_type = next(o[1] for o in config.objects if o[0] == target_id)
        instances = [o for o in config.objects if o[1] == target_type]
        assert len(instances) == 2
        assert "nearest to the" in config.instruction.text
        landmark_name = config.instruction.text.split("nearest to the ")[1].split(" ")[0]
        landmark_pos = next(p for t, p in config.receptacles if t == landmark_name)
        dists = {o[0]: abs(o[2][0] - landmark_pos[0]) + abs(o[2][1] - landmark_pos[1])
                 for o in instances}
        other = next(i for i in dists if i != target_id)
        assert dists[target_id] + 2 <= dists[other]


def test_long_task_requires_every_instance():
    config = generate_task("long", 1)
    goal = config.instruction.goal
    assert goal.quantifier == "all"
    k = len([o for o in config.objects if o[1] in goal.target_types])
    assert k >= 2
    assert f"all {k}" in config.instruction.text


def test_generator_rejects_unknown_subset():
    with pytest.raises(ValueError):
        generate_task("weird", 0)


def test_config_roundtrip_through_plain_objects():
    for subset in world.SUBSETS:
        config = generate_task(subset, 42)
        assert config_from_obj(config_to_obj(config)) == config
