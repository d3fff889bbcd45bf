import math
import random

import numpy as np
import pytest

from subgoals import (CraftingEnv, GridState, LearnedProvider, OracleProvider,
                      PlannerConfig, SubgoalClassifiers, augmented_cost,
                      augmented_transition, build_search_tree, compile_task,
                      default_world, demo_roots, generate_demo, parse_task,
                      plan, replay_plan, satisfies, transition_cost,
                      value_iteration_on_tree)
from subgoals.planner import SENTINEL_COST, ClassifierEvals

from helpers import bellman_tree_values, product_dijkstra, tiny_world, \
    small_machine_tasks


@pytest.fixture(scope="module")
def env():
    return CraftingEnv(default_world())


def seeded_model(env, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    model = SubgoalClassifiers.for_env(env)
    model.params[:] = scale * rng.standard_normal(model.params.shape)
    return model


class TestAugmented:
    def test_primitive_moves_only_the_grid_state(self, env):
        machine = compile_task(parse_task("grab-axe"))
        s0 = env.initial_state(agent=(2, 2))
        nxt = augmented_transition(env, machine, (s0, machine.start_node), "up")
        assert nxt[0].agent == (2, 1)
        assert nxt[1] == machine.start_node

    def test_machine_edge_moves_only_the_node(self, env):
        machine = compile_task(parse_task("grab-axe"))
        s0 = env.initial_state()
        (axe_node,) = machine.labeled_ids()
        edge = (machine.start_node, axe_node)
        nxt = augmented_transition(env, machine, (s0, machine.start_node), edge)
        assert nxt == (s0, axe_node)

    def test_non_adjacent_edge_rejected(self, env):
        machine = compile_task(parse_task("grab-axe then mine-wood"))
        s0 = env.initial_state()
        with pytest.raises(ValueError):
            augmented_transition(env, machine, (s0, machine.start_node),
                                 (machine.start_node, machine.final_node))

    def test_costs(self, env):
        machine = compile_task(parse_task("grab-axe then mine-wood"))
        model = SubgoalClassifiers.for_env(env)  # every output is 0.5
        evals = ClassifierEvals(LearnedProvider(model, env), env)
        s0 = env.initial_state()
        x = (s0, machine.start_node)
        assert augmented_cost(env, machine, evals, x, "up", 1.0) == \
            pytest.approx(0.1)
        axe, wood = machine.labeled_ids()
        inner = augmented_cost(env, machine, evals, (s0, axe), (axe, wood), 1.0)
        assert inner == pytest.approx(-2 * math.log(0.5))

    def test_super_node_edges_price_only_the_labeled_side(self, env):
        # entering the first subgoal prices only its unmet head, and with
        # ground-truth predicates at a sane start the edge costs nothing
        machine = compile_task(parse_task("grab-axe"))
        evals = ClassifierEvals(OracleProvider(env), env)
        s0 = env.initial_state()
        (axe_node,) = machine.labeled_ids()
        assert transition_cost(evals, machine, s0,
                               (machine.start_node, axe_node), 1.0) == 0.0
        armed = GridState(agent=s0.agent, inventory=("axe",),
                          objects=s0.objects)
        assert transition_cost(evals, machine, armed,
                               (axe_node, machine.final_node), 1.0) == 0.0
        assert math.isinf(transition_cost(evals, machine, armed,
                                          (machine.start_node, axe_node), 1.0))


class TestPlan:
    def test_two_step_grab(self, env):
        machine = compile_task(parse_task("grab-axe"))
        s0 = env.initial_state(agent=(1, 3))  # axe at (2, 3)
        result = plan(env, machine, OracleProvider(env), PlannerConfig(), s0,
                      rng=random.Random(0))
        assert result.success
        assert result.plan.cost == pytest.approx(0.2)  # move + toggle
        grid_states = [aug[0] for aug in result.plan.states]
        assert satisfies(grid_states, parse_task("grab-axe"),
                         env.oracle_tests())

    def test_oracle_fails_when_goal_already_true(self, env):
        machine = compile_task(parse_task("grab-axe"))
        s0 = GridState(agent=(1, 3), inventory=("axe",),
                       objects=env.initial_state().objects)
        result = plan(env, machine, OracleProvider(env), PlannerConfig(), s0,
                      rng=random.Random(0))
        assert not result.success
        assert result.expanded > 0

    def test_soft_classifiers_still_plan_at_a_cost(self, env):
        machine = compile_task(parse_task("grab-axe"))
        s0 = GridState(agent=(1, 3), inventory=("axe",),
                       objects=env.initial_state().objects)
        model = SubgoalClassifiers.for_env(env)
        result = plan(env, machine, LearnedProvider(model, env),
                      PlannerConfig(), s0, rng=random.Random(0))
        assert result.success
        assert result.plan.cost >= -2 * math.log(0.5)

    def test_replay_matches(self, env):
        machine = compile_task(parse_task("grab-axe then mine-wood"))
        provider = OracleProvider(env)
        s0 = env.initial_state(agent=(3, 3))
        result = plan(env, machine, provider, PlannerConfig(), s0,
                      rng=random.Random(1))
        states, cost = replay_plan(env, machine, provider, result.plan)
        assert states == result.plan.states
        assert cost == pytest.approx(result.plan.cost, abs=1e-12)

    def test_deterministic_given_seed(self, env):
        machine = compile_task(parse_task("grab-axe then mine-wood"))
        provider = OracleProvider(env)
        s0 = env.initial_state(agent=(3, 3))
        a = plan(env, machine, provider, PlannerConfig(seed=5), s0)
        b = plan(env, machine, provider, PlannerConfig(seed=5), s0)
        assert a.plan == b.plan and a.expanded == b.expanded

    def test_budget_failure_reports_expansions(self, env):
        machine = compile_task(parse_task("craft-boat"))
        s0 = env.initial_state(agent=(3, 3))
        result = plan(env, machine, OracleProvider(env),
                      PlannerConfig(total_budget=50), s0,
                      rng=random.Random(0))
        assert not result.success
        assert result.failure_reason == "budget exhausted"
        assert 0 < result.expanded <= 51

    def test_matches_product_dijkstra_on_random_instances(self):
        rng = random.Random(42)
        tasks = small_machine_tasks()
        unlimited = PlannerConfig(node_budget=None, total_budget=None)
        for trial in range(12):
            env = CraftingEnv(tiny_world(rng))
            model = seeded_model(env, trial)
            provider = LearnedProvider(model, env)
            task = tasks[rng.randrange(len(tasks))]
            machine = compile_task(task)
            s0 = env.initial_state(agent=rng.choice(env.free_cells()))
            result = plan(env, machine, provider, unlimited, s0,
                          rng=random.Random(trial))
            oracle_cost = product_dijkstra(env, machine, provider, s0)
            assert result.success
            assert result.plan.cost == pytest.approx(oracle_cost, abs=1e-9)

    def test_budget_monotonicity(self):
        rng = random.Random(7)
        env = CraftingEnv(tiny_world(rng))
        provider = LearnedProvider(seeded_model(env, 0), env)
        machine = compile_task(parse_task("grab-axe then mine-wood"))
        s0 = env.initial_state(agent=env.free_cells()[0])
        costs = []
        for budget in (40, 150, 600, None):
            result = plan(env, machine, provider,
                          PlannerConfig(node_budget=budget, seed=3), s0)
            costs.append(result.plan.cost if result.success else math.inf)
        assert all(costs[i + 1] <= costs[i] + 1e-12 for i in range(len(costs) - 1))


class TestSearchTree:
    def test_bfs_layer_is_complete(self, env):
        machine = compile_task(parse_task("grab-axe"))
        provider = OracleProvider(env)
        s0 = env.initial_state(agent=(3, 3))
        config = PlannerConfig(bfs_depth=1, best_first_depth=0, beam_width=3)
        tree = build_search_tree(env, machine, provider, config,
                                 [(s0, machine.start_node)])
        root = tree.nodes[tree.index[(s0, machine.start_node)]]
        primitive_children = [succ for action, succ in root.actions
                              if isinstance(action, str)]
        assert len(primitive_children) == 5
        assert all(succ is not None for succ in primitive_children)

    def test_beam_keeps_at_most_k_new_states_per_layer(self, env):
        machine = compile_task(parse_task("grab-axe"))
        provider = OracleProvider(env)
        s0 = env.initial_state(agent=(3, 3))
        config = PlannerConfig(bfs_depth=0, best_first_depth=6, beam_width=1)
        tree = build_search_tree(env, machine, provider, config,
                                 [(s0, machine.start_node)])
        by_layer = {}
        for node in tree.nodes:
            if node.fsm_node == machine.start_node and node.layer > 0:
                by_layer.setdefault(node.layer, []).append(node)
        assert by_layer
        assert all(len(nodes) <= 1 for nodes in by_layer.values())

    def test_demo_states_contained_with_wide_beam(self, env):
        task = parse_task("grab-axe")
        demo = generate_demo(env, task, seed=3, noise=0.0, shuffle=False)
        machine = compile_task(task)
        provider = OracleProvider(env)
        config = PlannerConfig(bfs_depth=2,
                               best_first_depth=len(demo.actions) + 2,
                               beam_width=100000)
        demo_env = CraftingEnv(env.config)
        tree = build_search_tree(demo_env, machine, provider, config,
                                 [(demo.states[0], machine.start_node)])
        grid_states = {node.state for node in tree.nodes}
        assert set(demo.states) <= grid_states

    def test_roots_cover_all_machine_nodes(self, env):
        task = parse_task("grab-axe then mine-wood")
        demo = generate_demo(env, task, seed=4, noise=0.0)
        machine = compile_task(task)
        provider = LearnedProvider(seeded_model(env, 2), env)
        tree = build_search_tree(env, machine, provider,
                                 PlannerConfig(bfs_depth=1, best_first_depth=2,
                                               beam_width=4),
                                 demo_roots(demo, machine))
        for state in demo.states:
            for v in machine.labeled_ids():
                assert (state, v) in tree.index


class TestTreeValues:
    def test_final_node_anchors_zero(self, env):
        machine = compile_task(parse_task("grab-axe"))
        provider = OracleProvider(env)
        s0 = env.initial_state(agent=(2, 3))  # standing on the axe
        tree = build_search_tree(env, machine, provider,
                                 PlannerConfig(bfs_depth=2, best_first_depth=2,
                                               beam_width=10),
                                 [(s0, machine.start_node)])
        values = value_iteration_on_tree(tree, provider, 1.0)
        finals = [i for i, node in enumerate(tree.nodes)
                  if node.fsm_node == machine.final_node]
        assert finals
        assert all(values.j_min[i] == 0.0 for i in finals)

    def test_matches_bellman_oracle(self):
        rng = random.Random(13)
        tasks = small_machine_tasks()
        for trial in range(8):
            env = CraftingEnv(tiny_world(rng))
            provider = LearnedProvider(seeded_model(env, trial + 50), env)
            task = tasks[rng.randrange(len(tasks))]
            machine = compile_task(task)
            s0 = env.initial_state(agent=rng.choice(env.free_cells()))
            roots = [(s0, v) for v in machine.node_ids()]
            tree = build_search_tree(env, machine, provider,
                                     PlannerConfig(bfs_depth=2,
                                                   best_first_depth=3,
                                                   beam_width=5),
                                     roots)
            values = value_iteration_on_tree(tree, provider, 1.0)
            oracle = bellman_tree_values(tree, provider, 1.0)
            assert np.allclose(values.j_min, oracle, atol=1e-9)

    def test_action_value_consistency(self, env):
        # J(x, a) is at least the action cost, with equality only when the
        # successor finishes at zero continuation
        machine = compile_task(parse_task("grab-axe then mine-wood"))
        provider = LearnedProvider(seeded_model(env, 9), env)
        s0 = env.initial_state(agent=(3, 3))
        tree = build_search_tree(env, machine, provider,
                                 PlannerConfig(bfs_depth=2, best_first_depth=3,
                                               beam_width=8),
                                 [(s0, machine.start_node)])
        values = value_iteration_on_tree(tree, provider, 1.0)
        for idx, node in enumerate(tree.nodes):
            if not node.actions:
                continue
            j = values.action_values(idx)
            costs = values.action_costs[idx]
            for pos, (action, succ) in enumerate(node.actions):
                if j[pos] >= SENTINEL_COST:
                    continue
                assert j[pos] >= costs[pos] - 1e-12
                if abs(j[pos] - costs[pos]) < 1e-12:
                    assert values.j_min[succ] == 0.0
