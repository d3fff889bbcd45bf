import math
import random

import numpy as np
import pytest

from subgoals import (CraftingEnv, Demonstration, LearnedProvider,
                      OracleProvider, PlannerConfig, SubgoalClassifiers,
                      TrainConfig, build_frozen_loss, build_search_tree,
                      compile_task, default_world, demo_roots, generate_demo,
                      loss, parse_task, rationality, score, segment,
                      topological_order, train, value_iteration_on_tree)
from subgoals.learning import _applicable_row, _score_parts, _softmax
from subgoals.planner import is_primitive

from helpers import (brute_force_score, random_walk_demo, tiny_world,
                     small_machine_tasks, two_subgoal_world)


def small_config(**kwargs):
    search = PlannerConfig(bfs_depth=2, best_first_depth=4, beam_width=6,
                           node_budget=2000)
    defaults = dict(search=search, negatives=2, epochs=3, batch_size=8,
                    learning_rate=0.05)
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def seeded_model(env, seed, scale=0.4):
    rng = np.random.default_rng(seed)
    model = SubgoalClassifiers.for_env(env)
    model.params[:] = scale * rng.standard_normal(model.params.shape)
    return model


class TestRationality:
    def test_two_action_softmax_value(self):
        probs = _softmax(-1.0 * np.array([0.0, 1.0]))
        assert probs[0] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)))

    def test_uniform_when_values_tie(self):
        probs = _softmax(np.zeros(4))
        assert np.allclose(probs, 0.25)

    def test_sharp_limit(self):
        probs = _softmax(-50.0 * np.array([0.0, 1.0, 2.0]))
        assert probs[0] == pytest.approx(1.0, abs=1e-20)

    def test_sums_to_one_on_tree(self):
        env = CraftingEnv(default_world())
        task = parse_task("grab-axe then mine-wood")
        machine = compile_task(task)
        demo = generate_demo(env, task, seed=0, noise=0.0)
        provider = LearnedProvider(seeded_model(env, 1), env)
        config = small_config()
        tree = build_search_tree(env, machine, provider, config.search,
                                 demo_roots(demo, machine))
        values = value_iteration_on_tree(tree, provider, 1.0)
        for i in range(len(demo.actions)):
            for v in machine.labeled_ids():
                x = (demo.states[i], v)
                idx = tree.index[x]
                records, _ = _applicable_row(values, idx)
                total = sum(rationality(values, x, action, 1.0)
                            for action, _succ in records)
                assert total == pytest.approx(1.0, abs=1e-12)

    def test_terminal_node_has_no_applicable_actions(self):
        env = CraftingEnv(default_world())
        task = parse_task("grab-axe")
        machine = compile_task(task)
        demo = generate_demo(env, task, seed=0, noise=0.0)
        provider = LearnedProvider(seeded_model(env, 1), env)
        tree = build_search_tree(env, machine, provider,
                                 small_config().search,
                                 demo_roots(demo, machine))
        values = value_iteration_on_tree(tree, provider, 1.0)
        with pytest.raises(ValueError):
            rationality(values, (demo.states[-1], machine.final_node), "up",
                        1.0)

    def test_absent_state_is_an_error(self):
        env = CraftingEnv(default_world())
        task = parse_task("grab-axe")
        machine = compile_task(task)
        demo = generate_demo(env, task, seed=1, noise=0.0)
        provider = OracleProvider(env)
        config = small_config()
        tree = build_search_tree(env, machine, provider, config.search,
                                 [(demo.states[0], machine.start_node)])
        values = value_iteration_on_tree(tree, provider, 1.0)
        missing_state = env.initial_state(agent=(6, 6))
        with pytest.raises(KeyError):
            rationality(values, (missing_state, machine.start_node), "up", 1.0)


def exhaustive_score(env, provider, demo, machine, config):
    parts = _score_parts(demo, machine, provider, config, env)
    order = parts.order
    label_idx = [-1 if machine.labels[v] is None
                 else provider.index[machine.labels[v]]
                 for v in machine.node_ids()]
    logs = [provider.log_state(s) for s in demo.states]

    def trans_logterm(edge, i):
        total = 0.0
        if label_idx[edge[0]] >= 0:
            total += float(logs[i][0][label_idx[edge[0]]])
        if label_idx[edge[1]] >= 0:
            total += float(logs[i][1][label_idx[edge[1]]])
        return total

    brute = brute_force_score(machine, order, parts.rat_rows, trans_logterm,
                              len(demo.states))
    return parts.score, brute


class TestScore:
    def test_single_node_two_states_matches_exhaustive(self):
        rng = random.Random(0)
        env = CraftingEnv(tiny_world(rng))
        provider = LearnedProvider(seeded_model(env, 2), env)
        config = small_config()
        task = parse_task("grab-axe")
        demo = random_walk_demo(env, task, rng, 1)
        value, brute = exhaustive_score(env, provider, demo,
                                        compile_task(task), config)
        assert value == pytest.approx(brute, abs=1e-9)

    def test_dp_matches_brute_force_on_random_instances(self):
        rng = random.Random(1)
        tasks = small_machine_tasks(max_labels=4)
        config = small_config()
        for trial in range(15):
            env = CraftingEnv(tiny_world(rng))
            provider = LearnedProvider(seeded_model(env, trial + 10), env)
            task = tasks[rng.randrange(len(tasks))]
            demo = random_walk_demo(env, task, rng, rng.randint(2, 7))
            value, brute = exhaustive_score(env, provider, demo,
                                            compile_task(task), config)
            assert value == pytest.approx(brute, abs=1e-9), trial

    def test_or_machine_takes_best_branch(self):
        env = CraftingEnv(default_world())
        config = small_config()
        provider = OracleProvider(env)
        demo = generate_demo(env, parse_task("grab-axe"), seed=3, noise=0.0)
        both, _ = score(demo, compile_task(parse_task("grab-axe or mine-coal")),
                        provider, config, env)
        left, _ = score(demo, compile_task(parse_task("grab-axe")),
                        provider, config, env)
        right, _ = score(demo, compile_task(parse_task("mine-coal")),
                         provider, config, env)
        assert both == pytest.approx(max(left, right), abs=1e-9)
        assert right == -math.inf  # never mined coal


class TestSegment:
    def test_single_node_machine_assigns_everything_to_it(self):
        env = CraftingEnv(default_world())
        task = parse_task("grab-axe")
        machine = compile_task(task)
        demo = generate_demo(env, task, seed=4, noise=0.0)
        alignment = segment(demo, machine, OracleProvider(env),
                            small_config(), env)
        (labeled,) = machine.labeled_ids()
        assert set(alignment.node_for_action) == {labeled}

    def test_transition_fires_at_first_oracle_satisfaction(self):
        env = CraftingEnv(default_world())
        task = parse_task("grab-axe then mine-wood")
        machine = compile_task(task)
        oracle = env.oracle_goal("grab-axe")
        for seed in range(3):
            demo = generate_demo(env, task, seed=seed, noise=0.0)
            alignment = segment(demo, machine, OracleProvider(env),
                                small_config(), env)
            first_true = next(i for i, s in enumerate(demo.states)
                              if oracle(s))
            axe, wood = machine.labeled_ids()
            fired = {edge: i for edge, i in alignment.transitions}
            assert fired[(axe, wood)] == first_true

    def test_alignment_is_a_start_to_final_path(self):
        rng = random.Random(6)
        env = CraftingEnv(default_world())
        task = parse_task("(grab-axe or grab-pickaxe) then mine-wood")
        machine = compile_task(task)
        demo = generate_demo(env, task, seed=8, noise=0.1)
        provider = LearnedProvider(seeded_model(env, 3), env)
        alignment = segment(demo, machine, provider, small_config(), env)
        node = machine.start_node
        for (u, w), _i in alignment.transitions:
            assert u == node and machine.has_edge(u, w)
            node = w
        assert node == machine.final_node
        indices = [i for _e, i in alignment.transitions]
        assert indices == sorted(indices)


class TestLossAndGradient:
    def test_gamma_zero_reduces_to_score_sum(self):
        rng = random.Random(7)
        env = CraftingEnv(two_subgoal_world(rng))
        model = seeded_model(env, 4)
        config = small_config(contrastive_weight=0.0)
        demo = generate_demo(env, parse_task("grab-axe"), seed=0, noise=0.0)
        negs = [[parse_task("mine-wood")]]
        value, grad = loss([demo], model, negs, config, env)
        provider = LearnedProvider(model, env)
        expected, _ = score(demo, compile_task(demo.task), provider, config,
                            env)
        assert value == pytest.approx(-expected, abs=1e-9)

    def test_identical_negative_gives_half_softmax(self):
        rng = random.Random(8)
        env = CraftingEnv(two_subgoal_world(rng))
        model = seeded_model(env, 5)
        config = small_config(contrastive_weight=0.1, contrastive_temp=1.0)
        demo = generate_demo(env, parse_task("grab-axe"), seed=1, noise=0.0)
        provider = LearnedProvider(model, env)
        frozen = build_frozen_loss([demo], [[demo.task]], provider, config)
        s, _ = score(demo, compile_task(demo.task), provider, config, env)
        expected = -(s + 0.1 * math.log(0.5))
        assert frozen.value(model.params) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_matches_finite_differences(self, seed):
        rng = random.Random(100 + seed)
        env = CraftingEnv(two_subgoal_world(rng))
        model = seeded_model(env, 200 + seed)
        config = small_config()
        demo = generate_demo(env, parse_task("grab-axe then mine-wood"),
                             seed=seed, noise=0.1)
        provider = LearnedProvider(model, env)
        negatives = [[parse_task("mine-wood"), parse_task("grab-axe")]]
        frozen = build_frozen_loss([demo], negatives, provider, config)
        params = model.params
        grad = frozen.gradient(params)
        h = 1e-5
        fd = np.zeros_like(grad)
        for k in range(len(params)):
            up = params.copy()
            up[k] += h
            down = params.copy()
            down[k] -= h
            fd[k] = (frozen.value(up) - frozen.value(down)) / (2 * h)
        denom = max(np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(fd - grad) / denom < 1e-4


class TestTrain:
    def test_zero_epochs_leaves_parameters_at_init(self):
        rng = random.Random(9)
        env = CraftingEnv(tiny_world(rng))
        demo = generate_demo(env, parse_task("grab-axe"), seed=0)
        model, logs = train([demo], env, small_config(epochs=0))
        assert not logs
        assert np.all(model.params == 0.0)

    def test_learns_single_feature_subgoal(self):
        rng = random.Random(10)
        env = CraftingEnv(two_subgoal_world(rng))
        demos = [generate_demo(env, parse_task("grab-axe"), seed=k, noise=0.05)
                 for k in range(12)]
        demos += [generate_demo(env, parse_task("mine-wood"), seed=k,
                                noise=0.05) for k in range(12)]
        config = small_config(epochs=6, negatives=2, learning_rate=0.2)
        model, logs = train(demos, env, config)
        col = env.feature_schema.index("inv:axe")
        weights = model.weights("grab-axe", 0)
        assert weights[col] > 0.2
        # agreement with the ground truth under the geometric-mean threshold
        from subgoals import LearnedProvider, compute_thresholds
        provider = LearnedProvider(model, env)
        cut = compute_thresholds(demos, provider).threshold("grab-axe")
        oracle = env.oracle_goal("grab-axe")
        states = {s for demo in demos for s in demo.states}
        agree = sum((model.goal_prob("grab-axe", env.features(s)) >= cut)
                    == oracle(s) for s in states)
        assert agree / len(states) >= 0.9

    def test_score_trend_improves(self):
        rng = random.Random(11)
        env = CraftingEnv(two_subgoal_world(rng))
        demos = [generate_demo(env, parse_task("grab-axe"), seed=k, noise=0.0)
                 for k in range(8)]
        config = small_config(epochs=8, negatives=2, learning_rate=0.05,
                              batch_size=8)
        _model, logs = train(demos, env, config)
        scores = [rec["mean_score"] for rec in logs]
        drops = sum(1 for a, b in zip(scores, scores[1:]) if b < a - 1e-9)
        assert drops <= max(1, int(0.25 * len(scores)))

    def test_deterministic(self):
        rng = random.Random(12)
        env = CraftingEnv(two_subgoal_world(rng))
        demos = [generate_demo(env, parse_task("grab-axe"), seed=k)
                 for k in range(4)]
        config = small_config(epochs=2)
        first, _ = train(demos, env, config)
        second, _ = train(demos, env, config)
        assert np.array_equal(first.params, second.params)
