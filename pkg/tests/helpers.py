"""Shared test oracles, each implemented independently of the library path
it checks."""

from __future__ import annotations

import heapq
import itertools
import math
import random

from subgoals import And, Atom, Or, Then, is_primitive
from subgoals.crafting import ACTIONS, STEP_COST


def interval_satisfies(states, task, tests) -> bool:
    """Bottom-up satisfaction oracle over explicit index-interval sets."""
    n = len(states)
    if n == 0:
        raise ValueError("empty sequence")
    truth = {}

    def holds(name, i):
        if (name, i) not in truth:
            truth[(name, i)] = bool(tests[name](states[i]))
        return truth[(name, i)]

    def compose(first, second):
        return {(i, j) for (i, k) in first for (k2, j) in second if k == k2}

    def sets(t):
        if isinstance(t, Atom):
            return {(i, j) for i in range(n) for j in range(i + 1, n)
                    if not holds(t.name, i) and holds(t.name, j)}
        if isinstance(t, Or):
            out = set()
            for child in t.children:
                out |= sets(child)
            return out
        if isinstance(t, Then):
            out = sets(t.children[0])
            for child in t.children[1:]:
                out = compose(out, sets(child))
            return out
        out = set()
        for perm in itertools.permutations(t.children):
            part = sets(perm[0])
            for child in perm[1:]:
                part = compose(part, sets(child))
            out |= part
        return out

    return (0, n - 1) in sets(task)


def count_canonical_tasks(vocab_size: int, max_atoms: int) -> int:
    """Counting oracle for the canonical task enumeration, via size
    recurrences instead of explicit construction."""
    from math import comb

    atom = {1: vocab_size}
    then_rooted: dict[int, int] = {}
    or_rooted: dict[int, int] = {}
    and_rooted: dict[int, int] = {}

    def non(node_counts, size):
        total = atom.get(size, 0)
        for table in (then_rooted, or_rooted, and_rooted):
            if table is not node_counts:
                total += table.get(size, 0)
        return total

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(1, total - parts + 2):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    for size in range(2, max_atoms + 1):
        # ordered sequences of >= 2 non-then children
        total = 0
        for parts in range(2, size + 1):
            for sizes in compositions(size, parts):
                prod = 1
                for s in sizes:
                    prod *= non(then_rooted, s)
                total += prod
        then_rooted[size] = total
        # unordered selections of >= 2 distinct children
        for table in (or_rooted, and_rooted):
            counts = [non(table, s) for s in range(size)]  # candidates by size
            # dp[(used, picked)] = ways; process candidate sizes one by one
            dp = {(0, 0): 1}
            for s in range(1, size):
                new_dp = dict(dp)
                for (used, picked), ways in dp.items():
                    for k in range(1, (size - used) // s + 1):
                        key = (used + k * s, picked + k)
                        new_dp[key] = new_dp.get(key, 0) + ways * comb(counts[s], k)
                dp = new_dp
            table[size] = sum(ways for (used, picked), ways in dp.items()
                              if used == size and picked >= 2)

    total = 0
    for size in range(1, max_atoms + 1):
        total += atom.get(size, 0) + then_rooted.get(size, 0)
        total += or_rooted.get(size, 0) + and_rooted.get(size, 0)
    return total


def product_dijkstra(env, machine, provider, s0, lam: float = 1.0):
    """Independent optimal cost on the product graph, plain Dijkstra."""
    from subgoals.planner import ClassifierEvals, transition_cost

    evals = ClassifierEvals(provider, env)
    start = (s0, machine.start_node)
    dist = {start: 0.0}
    heap = [(0.0, 0, start)]
    seq = itertools.count(1)
    best_goal = math.inf
    while heap:
        d, _, key = heapq.heappop(heap)
        if d > dist.get(key, math.inf):
            continue
        state, node = key
        if node == machine.final_node:
            best_goal = min(best_goal, d)
            continue
        if d >= best_goal:
            continue
        for action in ACTIONS:
            succ = (env.transition(state, action), node)
            nd = d + STEP_COST
            if nd < dist.get(succ, math.inf):
                dist[succ] = nd
                heapq.heappush(heap, (nd, next(seq), succ))
        for w in machine.successors[node]:
            cost = transition_cost(evals, machine, state, (node, w), lam)
            if not math.isfinite(cost):
                continue
            succ = (state, w)
            nd = d + cost
            if nd < dist.get(succ, math.inf):
                dist[succ] = nd
                heapq.heappush(heap, (nd, next(seq), succ))
    return best_goal


def bellman_tree_values(tree, provider, lam):
    """Recursive fixed-point oracle for tree continuation values, computed
    by value iteration to convergence instead of one shortest-path pass."""
    import numpy as np
    from subgoals.planner import (SENTINEL_COST, ClassifierEvals,
                                  transition_cost)

    evals = ClassifierEvals(provider, tree.env)
    n = len(tree.nodes)
    costs = []
    for node in tree.nodes:
        if not node.actions:
            costs.append([])
            continue
        row = []
        for action, succ in node.actions:
            if is_primitive(action):
                row.append((STEP_COST, succ))
            else:
                row.append((transition_cost(evals, tree.fsm, node.state,
                                            action, lam), succ))
        costs.append(row)

    values = [0.0 if tree.nodes[i].fsm_node == tree.fsm.final_node
              else SENTINEL_COST for i in range(n)]
    for _ in range(n + 1):
        changed = False
        for i in range(n):
            if tree.nodes[i].fsm_node == tree.fsm.final_node:
                continue
            best = SENTINEL_COST
            for cost, succ in costs[i]:
                if succ is None or values[succ] >= SENTINEL_COST:
                    continue
                best = min(best, cost + values[succ])
            if best < values[i] - 1e-15:
                values[i] = best
                changed = True
        if not changed:
            break
    return values


def brute_force_score(machine, order, rat_rows, trans_logterm, n):
    """Exhaustive alignment maximization: every start-to-final machine path
    and every nondecreasing tuple of firing indices.

    The start node fires its exit at the first state and the final node is
    entered at the last state; actions sit only at labeled nodes in
    between.
    """
    pos_of = {v: p for p, v in enumerate(order)}

    def stay_sum(lo, hi, j):  # actions lo..hi-1 at node position j
        total = 0.0
        for i in range(lo, hi):
            total += rat_rows[i][j]
        return total

    paths = []

    def walk(node, acc):
        if node == machine.final_node:
            paths.append(tuple(acc))
            return
        for succ in machine.successors[node]:
            walk(succ, acc + [(node, succ)])

    walk(machine.start_node, [])

    best = -math.inf
    for path in paths:
        m = len(path)
        if m == 1:
            continue  # cannot both fire at 0 and at n-1 unless they agree
        for interior in itertools.combinations_with_replacement(
                range(n), m - 2):
            firing = (0,) + interior + (n - 1,)
            if any(a > b for a, b in zip(firing, firing[1:])):
                continue
            total = 0.0
            cursor = 0
            node_pos = pos_of[machine.start_node]
            for edge, fire in zip(path, firing):
                if cursor < fire:
                    total += stay_sum(cursor, fire, node_pos)
                total += trans_logterm(edge, fire)
                cursor = fire
                node_pos = pos_of[edge[1]]
            if cursor < n - 1:
                total += stay_sum(cursor, n - 1, node_pos)
            if total > best:
                best = total
    return best


def random_walk_demo(env, task, rng, length):
    """A demo-shaped object from random actions (content-free)."""
    from subgoals import Demonstration
    state = env.initial_state(agent=rng.choice(env.free_cells()))
    states = [state]
    actions = []
    for _ in range(length):
        action = rng.choice(ACTIONS)
        actions.append(action)
        state = env.transition(state, action)
        states.append(state)
    return Demonstration(tuple(states), tuple(actions), task)


def tiny_world(rng, width=None, height=None):
    """Small random world over the axe/tree/workbench slice of the domain."""
    from subgoals.crafting import CraftingRule, ResourceRule, WorldConfig

    width = width or rng.randint(4, 7)
    height = height or rng.randint(4, 7)
    cells = [(x, y) for x in range(width) for y in range(height)]
    spots = rng.sample(cells, 4)
    placements = (
        (spots[0][0], spots[0][1], "axe", "present"),
        (spots[1][0], spots[1][1], "tree", "present"),
        (spots[2][0], spots[2][1], "tree", "present"),
        (spots[3][0], spots[3][1], "workbench", "present"),
    )
    return WorldConfig(
        width=width, height=height, capacity=4, placements=placements,
        rules=(CraftingRule(output="wood-plank", ingredients=("wood",),
                            station="workbench"),),
        resources=(ResourceRule(resource="tree", yields="wood", tool="axe"),),
        subgoals=(("craft-wood-plank", ("has-item", "wood-plank")),
                  ("grab-axe", ("has-item", "axe")),
                  ("mine-wood", ("has-item", "wood"))),
    )


def small_machine_tasks(max_labels=3):
    """Tasks over the tiny-world vocabulary whose machines stay small."""
    from subgoals import compile_task, enumerate_tasks, unparse

    vocab = {"grab-axe", "mine-wood", "craft-wood-plank"}
    out = []
    for task in sorted(enumerate_tasks(vocab, 3), key=unparse):
        machine = compile_task(task)
        if len(machine.labeled_ids()) <= max_labels:
            out.append(task)
    return out


def two_subgoal_world(rng):
    """Minimal world with exactly two subgoals, for gradient checks."""
    from subgoals.crafting import ResourceRule, WorldConfig

    width, height = 4, 4
    cells = [(x, y) for x in range(width) for y in range(height)]
    spots = rng.sample(cells, 2)
    placements = (
        (spots[0][0], spots[0][1], "axe", "present"),
        (spots[1][0], spots[1][1], "tree", "present"),
    )
    return WorldConfig(
        width=width, height=height, capacity=3, placements=placements,
        rules=(),
        resources=(ResourceRule(resource="tree", yields="wood", tool="axe"),),
        subgoals=(("grab-axe", ("has-item", "axe")),
                  ("mine-wood", ("has-item", "wood"))),
    )
