"""Planning over the product of the environment and a task machine.

A search state pairs a grid state with a machine node.  Primitive actions
move only the grid state at a fixed step cost; machine transitions move
only the node and are priced by how well the current state matches the
transition: leaving node ``v`` for ``v'`` at grid state ``s`` costs
``lambda * (-log goal_v(s) - log unmet_v'(s))``, with the term dropped on
the unlabeled super nodes.  With hard 0/1 classifiers this makes invalid
transitions inapplicable; with logistic classifiers it is a soft penalty.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass, field

import numpy as np

from .crafting import ACTIONS, STEP_COST, CraftingEnv, GridState
from .fsm import Fsm, topological_order

SENTINEL_COST = 1e9

AugmentedState = tuple  # (GridState, node id)
# an augmented action is either a primitive action name (str) or a machine
# edge (int, int)


def is_primitive(action) -> bool:
    return isinstance(action, str)


class ClassifierEvals:
    """Caches per-state log goal / log unmet vectors for one provider."""

    def __init__(self, provider, env: CraftingEnv):
        self.provider = provider
        self.env = env
        self.index = provider.index
        self._cache: dict[GridState, tuple[np.ndarray, np.ndarray]] = {}

    def log_state(self, state: GridState) -> tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(state)
        if hit is None:
            hit = self.provider.log_state(state)
            self._cache[state] = hit
        return hit

    def log_goal(self, state: GridState, name: str) -> float:
        return float(self.log_state(state)[0][self.index[name]])

    def log_unmet(self, state: GridState, name: str) -> float:
        return float(self.log_state(state)[1][self.index[name]])


def _label_index(fsm: Fsm, evals: ClassifierEvals, node: int) -> int:
    label = fsm.labels[node]
    return -1 if label is None else evals.index[label]


def transition_cost(evals: ClassifierEvals, fsm: Fsm, state: GridState,
                    edge: tuple[int, int], lam: float) -> float:
    """Cost of taking a machine edge at a grid state.

    Each labeled endpoint contributes its log term; super nodes contribute
    nothing, so the edge out of the start node prices only how unmet the
    entered subgoal is, and the edge into the final node prices only how
    achieved the exited subgoal is.
    """
    u, v = edge
    cost = 0.0
    log_goal, log_unmet = None, None
    gi = _label_index(fsm, evals, u)
    ii = _label_index(fsm, evals, v)
    if gi >= 0 or ii >= 0:
        log_goal, log_unmet = evals.log_state(state)
    if gi >= 0:
        cost -= float(log_goal[gi])
    if ii >= 0:
        cost -= float(log_unmet[ii])
    return lam * cost


def augmented_transition(env: CraftingEnv, fsm: Fsm, aug: AugmentedState,
                         action) -> AugmentedState:
    state, node = aug
    if is_primitive(action):
        return (env.transition(state, action), node)
    u, v = action
    if u != node or not fsm.has_edge(u, v):
        raise ValueError(f"edge {action} not applicable at node {node}")
    return (state, v)


def augmented_cost(env: CraftingEnv, fsm: Fsm, evals: ClassifierEvals,
                   aug: AugmentedState, action, lam: float) -> float:
    state, node = aug
    if is_primitive(action):
        return env.step_cost(state, action)
    u, v = action
    if u != node or not fsm.has_edge(u, v):
        raise ValueError(f"edge {action} not applicable at node {node}")
    return transition_cost(evals, fsm, state, action, lam)


@dataclass(frozen=True)
class PlannerConfig:
    """Search knobs.

    ``bfs_depth`` / ``best_first_depth`` / ``beam_width`` drive the
    two-stage tree builder; ``node_budget`` caps expansions per machine
    node and ``total_budget`` caps them globally.
    """

    transition_weight: float = 1.0
    bfs_depth: int = 3
    best_first_depth: int = 15
    beam_width: int = 10
    node_budget: int | None = 5000
    total_budget: int | None = None
    seed: int = 0


TRAIN_SEARCH = PlannerConfig(bfs_depth=3, best_first_depth=15, beam_width=10)
TEST_SEARCH = PlannerConfig(bfs_depth=4, best_first_depth=25, beam_width=10)


@dataclass(frozen=True)
class Plan:
    states: tuple[AugmentedState, ...]
    actions: tuple
    cost: float


@dataclass
class PlanResult:
    plan: Plan | None
    expanded: int
    success: bool
    failure_reason: str | None = None


def replay_plan(env: CraftingEnv, fsm: Fsm, provider, plan: Plan,
                lam: float = 1.0) -> tuple[tuple[AugmentedState, ...], float]:
    """Re-apply a plan's actions from its first state; returns the induced
    state sequence and summed cost."""
    evals = ClassifierEvals(provider, env)
    states = [plan.states[0]]
    cost = 0.0
    for action in plan.actions:
        cost += augmented_cost(env, fsm, evals, states[-1], action, lam)
        states.append(augmented_transition(env, fsm, states[-1], action))
    return tuple(states), cost


def plan(env: CraftingEnv, fsm: Fsm, provider, config: PlannerConfig,
         s0: GridState, start_node: int | None = None,
         rng: random.Random | None = None) -> PlanResult:
    """Find a cheapest path from (s0, start) to any state at the final node.

    The open list is bucketed per machine node; each round samples a node
    uniformly among those with queued states and pops that bucket's best
    entry, balancing effort across subgoals.  With unlimited budgets the
    search runs until no queued state can beat the best finished path, so
    the returned cost is the true optimum.
    """
    if rng is None:
        rng = random.Random(config.seed)
    lam = config.transition_weight
    evals = ClassifierEvals(provider, env)
    start = (s0, fsm.start_node if start_node is None else start_node)

    best: dict[AugmentedState, float] = {start: 0.0}
    parent: dict[AugmentedState, tuple[AugmentedState, object] | None] = {start: None}
    buckets: dict[int, list] = {v: [] for v in fsm.node_ids()}
    seq = itertools.count()
    heapq.heappush(buckets[start[1]], (0.0, next(seq), start))

    expanded_at = {v: 0 for v in fsm.node_ids()}
    expanded_total = 0
    final_keys: dict[AugmentedState, float] = {}
    if start[1] == fsm.final_node:
        final_keys[start] = 0.0

    def best_final() -> tuple[float, AugmentedState] | None:
        if not final_keys:
            return None
        key = min(final_keys, key=lambda k: (best[k], k[1]))
        return best[key], key

    def relax(key: AugmentedState, g: float, prev: AugmentedState, action):
        if g < best.get(key, math.inf):
            best[key] = g
            parent[key] = (prev, action)
            if key[1] == fsm.final_node:
                final_keys[key] = g
            else:
                heapq.heappush(buckets[key[1]], (g, next(seq), key))

    budget_hit = False
    while True:
        nonempty = sorted(v for v, bucket in buckets.items() if bucket)
        if not nonempty:
            break
        goal = best_final()
        if goal is not None:
            frontier_min = min(buckets[v][0][0] for v in nonempty)
            if frontier_min >= goal[0]:
                break
        if config.total_budget is not None and expanded_total >= config.total_budget:
            budget_hit = True
            break
        v = rng.choice(nonempty)
        g, _, key = heapq.heappop(buckets[v])
        if g > best.get(key, math.inf):
            continue  # stale entry
        if config.node_budget is not None and expanded_at[v] >= config.node_budget:
            buckets[v].clear()
            continue
        expanded_at[v] += 1
        expanded_total += 1
        state, node = key
        for action in ACTIONS:
            succ = (env.transition(state, action), node)
            relax(succ, g + STEP_COST, key, action)
        for w in fsm.successors[node]:
            cost = transition_cost(evals, fsm, state, (node, w), lam)
            if math.isfinite(cost):
                relax((state, w), g + cost, key, (node, w))

    goal = best_final()
    if goal is None:
        reason = "budget exhausted" if budget_hit else "search space exhausted"
        return PlanResult(plan=None, expanded=expanded_total, success=False,
                          failure_reason=reason)
    cost, key = goal
    actions = []
    states = [key]
    cursor = key
    while parent[cursor] is not None:
        prev, action = parent[cursor]
        actions.append(action)
        states.append(prev)
        cursor = prev
    states.reverse()
    actions.reverse()
    return PlanResult(plan=Plan(states=tuple(states), actions=tuple(actions),
                                cost=cost),
                      expanded=expanded_total, success=True)


# ---------------------------------------------------------------------------
# Search trees for learning
# ---------------------------------------------------------------------------

class TreeNode:
    __slots__ = ("state", "fsm_node", "g", "layer", "actions", "is_root")

    def __init__(self, state: GridState, fsm_node: int, g: float, layer: int,
                 is_root: bool = False):
        self.state = state
        self.fsm_node = fsm_node
        self.g = g
        self.layer = layer
        self.actions: list | None = None  # [(action, succ index or None)]
        self.is_root = is_root


class SearchTree:
    """Expansion graph over augmented states, deduplicated by state.

    Nodes at a machine node are grown in two stages: exhaustive
    breadth-first expansion to the BFS depth, then best-first layers where
    only the ``beam_width`` cheapest new states per layer are kept.  Every
    retained state then attempts each outgoing machine edge, seeding the
    next node's layer zero.  Root states are always retained and expanded.
    """

    def __init__(self, env: CraftingEnv, fsm: Fsm):
        self.env = env
        self.fsm = fsm
        self.nodes: list[TreeNode] = []
        self.index: dict[AugmentedState, int] = {}
        self.roots: list[int] = []
        self.at_machine_node: dict[int, list[int]] = {v: [] for v in fsm.node_ids()}

    def key(self, idx: int) -> AugmentedState:
        node = self.nodes[idx]
        return (node.state, node.fsm_node)

    def add(self, state: GridState, fsm_node: int, g: float, layer: int,
            is_root: bool = False) -> int:
        key = (state, fsm_node)
        existing = self.index.get(key)
        if existing is not None:
            node = self.nodes[existing]
            if g < node.g:
                node.g = g
            node.is_root = node.is_root or is_root
            return existing
        idx = len(self.nodes)
        self.nodes.append(TreeNode(state, fsm_node, g, layer, is_root))
        self.index[key] = idx
        self.at_machine_node[fsm_node].append(idx)
        return idx


def build_search_tree(env: CraftingEnv, fsm: Fsm, provider,
                      config: PlannerConfig,
                      roots, evals: ClassifierEvals | None = None) -> SearchTree:
    """Two-stage expansion from the given augmented root states."""
    lam = config.transition_weight
    if evals is None:
        evals = ClassifierEvals(provider, env)
    tree = SearchTree(env, fsm)
    order = topological_order(fsm)

    entries: dict[int, list[int]] = {v: [] for v in fsm.node_ids()}
    for state, v in roots:
        idx = tree.add(state, v, 0.0, 0, is_root=True)
        if idx not in entries[v]:
            entries[v].append(idx)
        tree.roots.append(idx)

    max_depth = config.bfs_depth + config.best_first_depth
    for v in order:
        if v == fsm.final_node:
            continue
        expansions = 0
        # layer zero: all roots, plus the cheapest transitioned-in states
        # up to the beam width; the rest stay in the tree unexpanded (they
        # still get machine transitions below)
        carried = [idx for idx in entries[v] if not tree.nodes[idx].is_root]
        carried.sort(key=lambda idx: (tree.nodes[idx].g, idx))
        frontier = ([idx for idx in entries[v] if tree.nodes[idx].is_root]
                    + carried[:config.beam_width])
        for layer in range(1, max_depth + 1):
            if not frontier:
                break
            # generate successor candidates without materializing them yet,
            # so a beam layer can drop the expensive ones cleanly
            links: list[tuple[int, str, AugmentedState]] = []
            fresh: dict[AugmentedState, float] = {}
            for idx in frontier:
                if config.node_budget is not None and expansions >= config.node_budget:
                    break
                node = tree.nodes[idx]
                node.actions = []
                expansions += 1
                for action in ACTIONS:
                    succ_key = (env.transition(node.state, action), v)
                    links.append((idx, action, succ_key))
                    if succ_key in tree.index:
                        existing = tree.nodes[tree.index[succ_key]]
                        existing.g = min(existing.g, node.g + STEP_COST)
                    else:
                        g = node.g + STEP_COST
                        fresh[succ_key] = min(fresh.get(succ_key, math.inf), g)
            keep = list(fresh)
            if layer > config.bfs_depth and len(keep) > config.beam_width:
                keep.sort(key=lambda k: fresh[k])
                keep = keep[:config.beam_width]
            frontier = [tree.add(key[0], key[1], fresh[key], layer)
                        for key in keep]
            for idx, action, succ_key in links:
                tree.nodes[idx].actions.append(
                    (action, tree.index.get(succ_key)))

        # machine transitions from every retained state at this node
        for idx in list(tree.at_machine_node[v]):
            node = tree.nodes[idx]
            if node.actions is None:
                node.actions = []
            for w in fsm.successors[v]:
                cost = transition_cost(evals, fsm, node.state, (v, w), lam)
                if not math.isfinite(cost):
                    continue
                child = tree.add(node.state, w, node.g + cost, 0)
                node.actions.append(((v, w), child))
                if child not in entries[w]:
                    entries[w].append(child)
    return tree


class TreeValues:
    """Cost-to-go over a search tree at fixed classifier parameters.

    ``j_min[i]`` is the cheapest in-tree continuation cost from node ``i``
    to any state at the final machine node (0 at the final node itself,
    the sentinel when the tree offers no route).  ``argmin[i]`` is the
    position of the minimizing action in the node's action list, and
    ``settle_order`` lists nodes with finite values from cheapest to
    costliest, which later passes reuse as a topological order over the
    chosen-action chains.
    """

    def __init__(self, tree: SearchTree, j_min: np.ndarray,
                 argmin: list[int | None], settle_order: list[int],
                 action_costs: list[np.ndarray | None]):
        self.tree = tree
        self.j_min = j_min
        self.argmin = argmin
        self.settle_order = settle_order
        self.action_costs = action_costs

    def action_values(self, idx: int) -> np.ndarray:
        """J for each recorded action at a node: its cost plus the
        successor's continuation, or the sentinel if the action leaves the
        tree."""
        node = self.tree.nodes[idx]
        costs = self.action_costs[idx]
        if costs is None or node.actions is None:
            return np.empty(0)
        values = np.full(len(node.actions), SENTINEL_COST)
        for pos, (_action, succ) in enumerate(node.actions):
            if succ is not None and self.j_min[succ] < SENTINEL_COST:
                values[pos] = costs[pos] + self.j_min[succ]
        return values


def value_iteration_on_tree(tree: SearchTree, provider, lam: float,
                            evals: ClassifierEvals | None = None) -> TreeValues:
    """Exact continuation costs on the tree via a backward shortest-path
    sweep from the final-node states (all action costs are nonnegative, so
    one Dijkstra pass is the fixed point of the value recursion)."""
    if evals is None:
        evals = ClassifierEvals(provider, tree.env)
    fsm = tree.fsm
    count = len(tree.nodes)
    action_costs: list[np.ndarray | None] = [None] * count
    reverse: list[list[tuple[int, int]]] = [[] for _ in range(count)]

    for idx, node in enumerate(tree.nodes):
        if not node.actions:
            continue
        costs = np.empty(len(node.actions))
        for pos, (action, succ) in enumerate(node.actions):
            if type(action) is str:
                costs[pos] = STEP_COST
            else:
                costs[pos] = transition_cost(evals, fsm, node.state, action, lam)
            if succ is not None:
                reverse[succ].append((idx, pos))
        action_costs[idx] = costs

    j_min = np.full(count, SENTINEL_COST)
    argmin: list[int | None] = [None] * count
    heap: list[tuple[float, int]] = []
    for idx, node in enumerate(tree.nodes):
        if node.fsm_node == fsm.final_node:
            j_min[idx] = 0.0
            heapq.heappush(heap, (0.0, idx))

    settled = [False] * count
    settle_order: list[int] = []
    while heap:
        dist, idx = heapq.heappop(heap)
        if settled[idx] or dist > j_min[idx]:
            continue
        settled[idx] = True
        settle_order.append(idx)
        for parent, pos in reverse[idx]:
            cand = action_costs[parent][pos] + dist
            if cand < j_min[parent]:
                j_min[parent] = cand
                argmin[parent] = pos
                heapq.heappush(heap, (cand, parent))
    return TreeValues(tree, j_min, argmin, settle_order, action_costs)
