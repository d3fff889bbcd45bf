"""Learning subgoal classifiers from unsegmented demonstrations.

For each demonstration and candidate task, a search tree rooted at every
demonstration state yields continuation costs; the rationality of each
observed action is its softmax weight under those costs.  A dynamic
program then aligns the trajectory against the task machine, maximizing
summed log rationality plus the log fit of every machine transition.  The
training objective sums the aligned score with a contrastive term that
ranks the true task against sampled negatives.

Gradients are exact under frozen structure: the tree topology, the
minimizing action at every tree node, and the alignment are held fixed
while the logistic terms they select carry derivatives.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .classifiers import GOAL, UNMET, LearnedProvider, SubgoalClassifiers
from .crafting import ACTIONS, STEP_COST, CraftingEnv
from .demos import Demonstration
from .fsm import Fsm, compile_task, topological_order
from .planner import (PlannerConfig, SENTINEL_COST, TRAIN_SEARCH, SearchTree,
                      TreeValues, build_search_tree, is_primitive,
                      value_iteration_on_tree)
from .tasklang import TaskAst, enumerate_tasks, unparse

_UNIFORM_LOG = -math.log(len(ACTIONS))


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0                 # inverse rationality
    contrastive_weight: float = 0.1    # gamma
    contrastive_temp: float = 1.0      # beta
    negatives: int = 4
    negative_max_atoms: int = 3
    learning_rate: float = 0.1
    decay_every: int = 10
    decay_factor: float = 0.5
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    search: PlannerConfig = TRAIN_SEARCH

    @property
    def transition_weight(self) -> float:
        return self.search.transition_weight


@dataclass(frozen=True)
class Alignment:
    """Machine-node assignment for a trajectory.

    ``node_for_action[i]`` is the node occupied while action ``i`` was
    taken; ``transitions`` lists each machine edge with the state index at
    which it fires (several edges may fire at one index).
    """

    node_for_action: tuple[int, ...]
    transitions: tuple[tuple[tuple[int, int], int], ...]


def demo_roots(demo: Demonstration, machine: Fsm) -> list:
    """Every (state, labeled node) pair, so the tree covers all alignment
    queries.  Super nodes are instantaneous routing points: no action is
    ever aligned to them, so they need no roots."""
    return [(state, v) for state in demo.states for v in machine.labeled_ids()]


def _applicable_row(values: TreeValues, idx: int):
    """Canonical action row at a tree node: every primitive (sentinel-valued
    if its successor left the tree) plus the recorded machine transitions.

    Returns (records, J) where each record is (action, successor index or
    None) and J holds the continuation cost of that action.
    """
    tree = values.tree
    node = tree.nodes[idx]
    primitive_succ: dict[str, int | None] = {}
    transitions: list[tuple[tuple[int, int], int | None]] = []
    trans_costs: list[float] = []
    costs = values.action_costs[idx]
    if node.actions:
        for pos, (action, succ) in enumerate(node.actions):
            if is_primitive(action):
                primitive_succ[action] = succ
            else:
                transitions.append((action, succ))
                trans_costs.append(float(costs[pos]))
    records = [(a, primitive_succ.get(a)) for a in ACTIONS] + transitions
    j = np.full(len(records), SENTINEL_COST)
    for pos, (action, succ) in enumerate(records):
        if succ is None or values.j_min[succ] >= SENTINEL_COST:
            continue
        cost = STEP_COST if is_primitive(action) else trans_costs[pos - len(ACTIONS)]
        j[pos] = cost + values.j_min[succ]
    return records, j


def rationality(values: TreeValues, x, action, alpha: float) -> float:
    """Probability a near-optimal agent picks ``action`` at augmented state
    ``x``: softmax of the negated, alpha-scaled continuation costs over the
    actions applicable there."""
    tree = values.tree
    if x[1] == tree.fsm.final_node:
        raise ValueError("the augmented process terminates at the final "
                         "node; no action is applicable there")
    idx = tree.index.get(x)
    if idx is None:
        raise KeyError(f"augmented state not covered by the search tree: {x!r}")
    records, j = _applicable_row(values, idx)
    probs = _softmax(-alpha * j)
    for pos, (act, _succ) in enumerate(records):
        if act == action:
            return float(probs[pos])
    raise KeyError(f"action {action!r} not recorded at {x!r}")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    weights = np.exp(shifted)
    return weights / weights.sum()


# ---------------------------------------------------------------------------
# Score: align a trajectory against the task machine
# ---------------------------------------------------------------------------

_STAY = 0
_JUMP = 1
_END = 2


class _ScoreParts:
    """Everything score() computed, kept for gradient freezing."""

    def __init__(self, demo, machine, tree, values, order, rat_rows,
                 score_value, alignment):
        self.demo = demo
        self.machine = machine
        self.tree = tree
        self.values = values
        self.order = order
        self.rat_rows = rat_rows
        self.score = score_value
        self.alignment = alignment


def _rat_log_rows(tree: SearchTree, values: TreeValues, demo: Demonstration,
                  order, alpha: float) -> np.ndarray:
    """log rationality of demo action i at machine node j, for all (i, j)."""
    machine = tree.fsm
    n = len(demo.states)
    rows = np.full((max(n - 1, 0), len(order)), -math.inf)
    action_pos = {a: p for p, a in enumerate(ACTIONS)}
    for j, v in enumerate(order):
        if machine.labels[v] is None:
            continue  # actions never align to the super nodes
        for i in range(n - 1):
            idx = tree.index.get((demo.states[i], v))
            if idx is None:
                raise KeyError("demo state missing from tree; root it first")
            _records, j_vals = _applicable_row(values, idx)
            logits = -alpha * j_vals
            shifted = logits - np.max(logits)
            log_norm = math.log(np.exp(shifted).sum())
            pos = action_pos[demo.actions[i]]
            rows[i, j] = float(shifted[pos]) - log_norm
    return rows


def _transition_logterm(log_goal, log_unmet, machine, label_idx, edge, i):
    u, v = edge
    total = 0.0
    gi = label_idx[u]
    ii = label_idx[v]
    if gi >= 0:
        total += float(log_goal[i][gi])
    if ii >= 0:
        total += float(log_unmet[i][ii])
    return total


def _score_parts(demo: Demonstration, machine: Fsm, provider,
                 config: TrainConfig, env: CraftingEnv,
                 tree: SearchTree | None = None,
                 evals: "ClassifierEvals | None" = None) -> _ScoreParts:
    from .planner import ClassifierEvals
    if evals is None:
        evals = ClassifierEvals(provider, env)
    if tree is None:
        tree = build_search_tree(env, machine, provider, config.search,
                                 demo_roots(demo, machine), evals=evals)
    values = value_iteration_on_tree(tree, provider, config.transition_weight,
                                     evals=evals)
    order = topological_order(machine)
    pos_of = {v: p for p, v in enumerate(order)}
    rat_rows = _rat_log_rows(tree, values, demo, order, config.alpha)

    n = len(demo.states)
    t_last = len(order) - 1
    logs = [evals.log_state(state) for state in demo.states]
    log_goal = [lg for lg, _ in logs]
    log_unmet = [lu for _, lu in logs]
    label_idx = [-1 if machine.labels[v] is None else provider.index[machine.labels[v]]
                 for v in machine.node_ids()]
    edges_from = [[(pos_of[w], (v, w)) for w in machine.successors[v]]
                  for v in order]

    f = np.full((n, len(order)), -math.inf)
    choice = np.full((n, len(order), 2), -1, dtype=np.int64)
    f[n - 1, t_last] = 0.0
    choice[n - 1, t_last] = (_END, 0)
    for i in range(n - 1, -1, -1):
        for j in range(t_last, -1, -1):
            if i == n - 1 and j == t_last:
                continue
            best = -math.inf
            best_choice = (-1, -1)
            for k_pos, edge in edges_from[j]:
                cand = _transition_logterm(log_goal, log_unmet, machine,
                                           label_idx, edge, i) + f[i, k_pos]
                if cand > best:
                    best = cand
                    best_choice = (_JUMP, k_pos)
            # actions sit only at labeled nodes; the super nodes are
            # instantaneous, so the start node fires its exit at the first
            # state and the final node is entered at the last state
            if i < n - 1 and label_idx[order[j]] >= 0:
                cand = rat_rows[i, j] + f[i + 1, j]
                if cand > best:
                    best = cand
                    best_choice = (_STAY, 0)
            f[i, j] = best
            choice[i, j] = best_choice

    score_value = float(f[0, 0])
    alignment = _backtrace(choice, order, n, t_last) if math.isfinite(score_value) else None
    return _ScoreParts(demo, machine, tree, values, order, rat_rows,
                       score_value, alignment)


def _backtrace(choice, order, n, t_last) -> Alignment:
    node_for_action = []
    transitions = []
    i, j = 0, 0
    while True:
        kind, arg = choice[i, j]
        if kind == _END:
            break
        if kind == _STAY:
            node_for_action.append(order[j])
            i += 1
        else:
            transitions.append(((order[j], order[arg]), i))
            j = arg
    return Alignment(tuple(node_for_action), tuple(transitions))


def score(demo: Demonstration, machine: Fsm, provider, config: TrainConfig,
          env: CraftingEnv,
          tree: SearchTree | None = None) -> tuple[float, Alignment | None]:
    """Best alignment value of a demonstration against a task machine."""
    parts = _score_parts(demo, machine, provider, config, env, tree)
    return parts.score, parts.alignment


def segment(demo: Demonstration, machine: Fsm, provider,
            config: TrainConfig, env: CraftingEnv) -> Alignment:
    """The maximizing alignment behind score()."""
    parts = _score_parts(demo, machine, provider, config, env)
    if parts.alignment is None:
        raise ValueError("no feasible alignment (hard classifiers rejected "
                         "every machine path)")
    return parts.alignment


# ---------------------------------------------------------------------------
# Frozen-structure evaluation: re-evaluate score at nearby parameters with
# the tree, the minimizing actions, and the alignment held fixed
# ---------------------------------------------------------------------------

_KIND_TERMINAL = 0
_KIND_PRIMITIVE = 1
_KIND_TRANSITION = 2

_SENT_SLOT = -1


class FrozenScore:
    """One (demonstration, task) score as a differentiable function of the
    classifier parameters, with all discrete choices pinned at build time."""

    def __init__(self, classifiers: SubgoalClassifiers, alpha: float,
                 lam: float):
        self.classifiers = classifiers
        self.alpha = alpha
        self.lam = lam
        self.const = 0.0
        self._phi_rows: list[np.ndarray] = []
        self._row_of: dict = {}
        # chain slots, in settle order (successors come first)
        self.kind: list[int] = []
        self.succ: list[int] = []
        self.g_sub: list[int] = []
        self.i_sub: list[int] = []
        self.srow: list[int] = []
        # rationality rows: per row a list of frozen action records
        # (kind, g_sub, i_sub, srow, succ_slot) and the observed position
        self.rows: list[tuple[list[tuple[int, int, int, int, int]], int]] = []
        # direct alignment transition terms
        self.goal_terms: list[tuple[int, int]] = []   # (subgoal, state row)
        self.unmet_terms: list[tuple[int, int]] = []

    # -- construction -------------------------------------------------------

    def _row(self, env: CraftingEnv, state) -> int:
        row = self._row_of.get(state)
        if row is None:
            row = len(self._phi_rows)
            self._row_of[state] = row
            self._phi_rows.append(env.features(state))
        return row

    @classmethod
    def build(cls, parts: _ScoreParts, provider: LearnedProvider,
              config: TrainConfig) -> "FrozenScore":
        if parts.alignment is None:
            raise ValueError("cannot freeze an infeasible alignment")
        self = cls(provider.classifiers, config.alpha, config.transition_weight)
        env = provider.env
        tree, values, machine = parts.tree, parts.values, parts.machine
        label_idx = [
            -1 if machine.labels[v] is None else provider.index[machine.labels[v]]
            for v in machine.node_ids()]

        slot_of: dict[int, int] = {}
        for idx in values.settle_order:
            node = tree.nodes[idx]
            slot = len(self.kind)
            slot_of[idx] = slot
            if node.fsm_node == machine.final_node:
                self._push_slot(_KIND_TERMINAL, _SENT_SLOT, -1, -1, -1)
                continue
            pos = values.argmin[idx]
            action, succ = node.actions[pos]
            if is_primitive(action):
                self._push_slot(_KIND_PRIMITIVE, slot_of[succ], -1, -1, -1)
            else:
                u, w = action
                self._push_slot(_KIND_TRANSITION, slot_of[succ],
                                label_idx[u], label_idx[w],
                                self._row(env, node.state))

        demo, alignment = parts.demo, parts.alignment
        action_pos = {a: p for p, a in enumerate(ACTIONS)}
        for i, v in enumerate(alignment.node_for_action):
            if machine.labels[v] is None:
                raise ValueError("alignment placed an action on a super node")
            idx = tree.index[(demo.states[i], v)]
            node = tree.nodes[idx]
            row_records, _j = _applicable_row(values, idx)
            records = []
            for action, succ in row_records:
                if succ is None or values.j_min[succ] >= SENTINEL_COST:
                    rec = (_KIND_TERMINAL, -1, -1, -1, _SENT_SLOT)
                elif is_primitive(action):
                    rec = (_KIND_PRIMITIVE, -1, -1, -1, slot_of[succ])
                else:
                    u, w = action
                    rec = (_KIND_TRANSITION, label_idx[u], label_idx[w],
                           self._row(env, node.state), slot_of[succ])
                records.append(rec)
            self.rows.append((records, action_pos[demo.actions[i]]))

        for (u, w), i in alignment.transitions:
            srow = self._row(env, demo.states[i])
            if label_idx[u] >= 0:
                self.goal_terms.append((label_idx[u], srow))
            if label_idx[w] >= 0:
                self.unmet_terms.append((label_idx[w], srow))

        self._finalize()
        self.built_value = parts.score
        return self

    def _push_slot(self, kind, succ, g_sub, i_sub, srow):
        self.kind.append(kind)
        self.succ.append(succ)
        self.g_sub.append(g_sub)
        self.i_sub.append(i_sub)
        self.srow.append(srow)

    def _finalize(self):
        self.phi = (np.vstack(self._phi_rows) if self._phi_rows
                    else np.zeros((0, len(self.classifiers.feature_schema))))
        self.kind = np.array(self.kind, dtype=np.int8)
        self.succ = np.array(self.succ, dtype=np.int64)
        self.g_sub = np.array(self.g_sub, dtype=np.int64)
        self.i_sub = np.array(self.i_sub, dtype=np.int64)
        self.srow = np.array(self.srow, dtype=np.int64)

    # -- evaluation -----------------------------------------------------------

    def _log_tables(self, params: np.ndarray):
        c = self.classifiers
        table = params.reshape(len(c.subgoals), 2, c.block)
        zg = self.phi @ table[:, GOAL, :-1].T + table[:, GOAL, -1]
        zi = self.phi @ table[:, UNMET, :-1].T + table[:, UNMET, -1]
        return -np.logaddexp(0.0, -zg), -np.logaddexp(0.0, -zi), zg, zi

    def _trans_cost(self, lg, li, g_sub, i_sub, srow) -> float:
        cost = 0.0
        if g_sub >= 0:
            cost -= float(lg[srow, g_sub])
        if i_sub >= 0:
            cost -= float(li[srow, i_sub])
        return self.lam * cost

    def _forward(self, params: np.ndarray):
        lg, li, _zg, _zi = self._log_tables(params)
        n_slots = len(self.kind)
        jm = np.empty(n_slots)
        for slot in range(n_slots):
            kind = self.kind[slot]
            if kind == _KIND_TERMINAL:
                jm[slot] = 0.0
            elif kind == _KIND_PRIMITIVE:
                jm[slot] = STEP_COST + jm[self.succ[slot]]
            else:
                jm[slot] = self._trans_cost(lg, li, self.g_sub[slot],
                                            self.i_sub[slot],
                                            self.srow[slot]) + jm[self.succ[slot]]
        total = self.const
        row_probs = []
        row_j = []
        for records, observed in self.rows:
            j = np.empty(len(records))
            for pos, (kind, g_sub, i_sub, srow, succ) in enumerate(records):
                if succ == _SENT_SLOT:
                    j[pos] = SENTINEL_COST
                elif kind == _KIND_PRIMITIVE:
                    j[pos] = STEP_COST + jm[succ]
                else:
                    j[pos] = self._trans_cost(lg, li, g_sub, i_sub, srow) + jm[succ]
            logits = -self.alpha * j
            shifted = logits - np.max(logits)
            weights = np.exp(shifted)
            norm = weights.sum()
            total += float(shifted[observed]) - math.log(norm)
            row_probs.append(weights / norm)
            row_j.append(j)
        for sub, srow in self.goal_terms:
            total += float(lg[srow, sub])
        for sub, srow in self.unmet_terms:
            total += float(li[srow, sub])
        return total, (lg, li, jm, row_probs)

    def value(self, params: np.ndarray) -> float:
        return self._forward(params)[0]

    def value_and_gradient(self, params: np.ndarray) -> tuple[float, np.ndarray]:
        return self._forward(params)[0], self.gradient(params)

    def gradient(self, params: np.ndarray) -> np.ndarray:
        """Exact gradient of value() at the given parameters."""
        _total, (lg, li, _jm, row_probs) = self._forward(params)
        c = self.classifiers
        table = params.reshape(len(c.subgoals), 2, c.block)
        # 1 - sigmoid(z), computed stably from the logits
        zg = self.phi @ table[:, GOAL, :-1].T + table[:, GOAL, -1]
        zi = self.phi @ table[:, UNMET, :-1].T + table[:, UNMET, -1]
        fg = np.exp(-np.logaddexp(0.0, zg))
        fi = np.exp(-np.logaddexp(0.0, zi))

        goal_acc: dict[int, list[tuple[int, float]]] = {}
        unmet_acc: dict[int, list[tuple[int, float]]] = {}

        def add(acc, sub, srow, weight):
            acc.setdefault(sub, []).append((srow, weight))

        mu = np.zeros(len(self.kind))
        for (records, observed), probs in zip(self.rows, row_probs):
            for pos, (kind, g_sub, i_sub, srow, succ) in enumerate(records):
                if succ == _SENT_SLOT:
                    continue
                coef = -self.alpha * ((1.0 if pos == observed else 0.0)
                                      - probs[pos])
                if coef == 0.0:
                    continue
                if kind == _KIND_TRANSITION:
                    if g_sub >= 0:
                        add(goal_acc, g_sub, srow, -self.lam * coef)
                    if i_sub >= 0:
                        add(unmet_acc, i_sub, srow, -self.lam * coef)
                mu[succ] += coef
        for sub, srow in self.goal_terms:
            add(goal_acc, sub, srow, 1.0)
        for sub, srow in self.unmet_terms:
            add(unmet_acc, sub, srow, 1.0)

        for slot in range(len(self.kind) - 1, -1, -1):
            weight = mu[slot]
            if weight == 0.0 or self.kind[slot] == _KIND_TERMINAL:
                continue
            if self.kind[slot] == _KIND_TRANSITION:
                if self.g_sub[slot] >= 0:
                    add(goal_acc, int(self.g_sub[slot]), int(self.srow[slot]),
                        -self.lam * weight)
                if self.i_sub[slot] >= 0:
                    add(unmet_acc, int(self.i_sub[slot]), int(self.srow[slot]),
                        -self.lam * weight)
            mu[self.succ[slot]] += weight

        grad = np.zeros_like(params)
        view = grad.reshape(len(c.subgoals), 2, c.block)
        for which, acc, fact in ((GOAL, goal_acc, fg), (UNMET, unmet_acc, fi)):
            for sub, pairs in acc.items():
                rows = np.array([r for r, _w in pairs], dtype=np.int64)
                ws = np.array([w for _r, w in pairs]) * fact[rows, sub]
                view[sub, which, :-1] += ws @ self.phi[rows]
                view[sub, which, -1] += ws.sum()
        return grad


class FrozenLoss:
    """Batch objective with frozen structure: per sample the true-task score
    plus a contrastive log-softmax of the true score against negatives.
    value() is the quantity being minimized (the negated objective)."""

    def __init__(self, items: list[tuple[FrozenScore, list[FrozenScore]]],
                 gamma: float, beta: float):
        self.items = items
        self.gamma = gamma
        self.beta = beta

    def objective(self, params: np.ndarray) -> float:
        total = 0.0
        for true_fs, negatives in self.items:
            s_true = true_fs.value(params)
            scores = np.array([s_true] + [fs.value(params) for fs in negatives])
            logits = self.beta * scores
            lse = float(np.max(logits) + np.log(np.exp(logits - np.max(logits)).sum()))
            total += s_true + self.gamma * (self.beta * s_true - lse)
        return total

    def value(self, params: np.ndarray) -> float:
        return -self.objective(params)

    def gradient(self, params: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(params)
        for true_fs, negatives in self.items:
            s_true, g_true = true_fs.value_and_gradient(params)
            pairs = [fs.value_and_gradient(params) for fs in negatives]
            scores = np.array([s_true] + [s for s, _g in pairs])
            probs = _softmax(self.beta * scores)
            w_true = 1.0 + self.gamma * self.beta * (1.0 - probs[0])
            grad -= w_true * g_true
            for (_s, g), p in zip(pairs, probs[1:]):
                grad += self.gamma * self.beta * p * g
        return grad


def build_frozen_loss(batch, negatives, provider: LearnedProvider,
                      config: TrainConfig,
                      fsm_cache: dict | None = None,
                      evals=None) -> FrozenLoss:
    """Freeze score graphs for each demonstration and its candidate tasks.

    ``negatives`` is one task list per demonstration, excluding the true
    task.
    """
    from .planner import ClassifierEvals
    env = provider.env
    if fsm_cache is None:
        fsm_cache = {}
    if evals is None:
        evals = ClassifierEvals(provider, env)

    def machine_for(task: TaskAst) -> Fsm:
        if task not in fsm_cache:
            fsm_cache[task] = compile_task(task)
        return fsm_cache[task]

    items = []
    for demo, negs in zip(batch, negatives):
        true_parts = _score_parts(demo, machine_for(demo.task), provider,
                                  config, env, evals=evals)
        true_fs = FrozenScore.build(true_parts, provider, config)
        neg_fs = []
        for task in negs:
            parts = _score_parts(demo, machine_for(task), provider, config,
                                 env, evals=evals)
            neg_fs.append(FrozenScore.build(parts, provider, config))
        items.append((true_fs, neg_fs))
    return FrozenLoss(items, config.contrastive_weight, config.contrastive_temp)


def loss(batch, classifiers: SubgoalClassifiers, negatives,
         config: TrainConfig, env: CraftingEnv) -> tuple[float, np.ndarray]:
    """Minimized objective and its exact frozen-structure gradient."""
    provider = LearnedProvider(classifiers, env)
    frozen = build_frozen_loss(batch, negatives, provider, config)
    return frozen.value(classifiers.params), frozen.gradient(classifiers.params)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def sample_negatives(pool: list[TaskAst], true_task: TaskAst, count: int,
                     rng: random.Random) -> list[TaskAst]:
    out: list[TaskAst] = []
    guard = 0
    while len(out) < count:
        cand = pool[rng.randrange(len(pool))]
        if cand != true_task and cand not in out:
            out.append(cand)
        guard += 1
        if guard > 100 * count:
            raise ValueError("negative pool too small for requested count")
    return out


def train(dataset, env: CraftingEnv, config: TrainConfig,
          progress=None) -> tuple[SubgoalClassifiers, list[dict]]:
    """Gradient training of the classifiers on a demonstration corpus.

    Every epoch resamples negatives, rebuilds the frozen score graphs at
    the current parameters batch by batch, and applies plain gradient
    descent with a step-decay schedule.  Deterministic for a fixed seed.
    """
    demos = list(dataset)
    if not demos:
        raise ValueError("empty dataset")
    classifiers = SubgoalClassifiers.for_env(env)
    pool = sorted(enumerate_tasks(env.subgoal_names(),
                                  config.negative_max_atoms), key=unparse)
    rng = random.Random(config.seed)
    fsm_cache: dict[TaskAst, Fsm] = {}
    logs: list[dict] = []
    lr = config.learning_rate
    for epoch in range(config.epochs):
        started = time.perf_counter()
        if epoch > 0 and config.decay_every > 0 and epoch % config.decay_every == 0:
            lr *= config.decay_factor
        order = list(range(len(demos)))
        rng.shuffle(order)
        scores_true: list[float] = []
        ranked_first = 0
        skipped = 0
        for lo in range(0, len(order), config.batch_size):
            batch_idx = order[lo:lo + config.batch_size]
            provider = LearnedProvider(classifiers, env)
            from .planner import ClassifierEvals
            evals = ClassifierEvals(provider, env)
            items = []
            for di in batch_idx:
                demo = demos[di]
                negs = sample_negatives(pool, demo.task, config.negatives, rng)
                try:
                    frozen = build_frozen_loss([demo], [negs], provider,
                                               config, fsm_cache, evals=evals)
                except (KeyError, ValueError):
                    skipped += 1
                    continue
                items.extend(frozen.items)
            if not items:
                continue
            frozen = FrozenLoss(items, config.contrastive_weight,
                                config.contrastive_temp)
            grad = frozen.gradient(classifiers.params)
            for true_fs, neg_fs in items:
                scores_true.append(true_fs.built_value)
                if all(true_fs.built_value > fs.built_value for fs in neg_fs):
                    ranked_first += 1
            classifiers.params -= lr * grad
        record = {
            "epoch": epoch,
            "mean_score": (float(np.mean(scores_true)) if scores_true
                           else float("nan")),
            "contrastive_accuracy": (ranked_first / len(scores_true)
                                     if scores_true else 0.0),
            "skipped": skipped,
            "learning_rate": lr,
            "wall_time": time.perf_counter() - started,
        }
        logs.append(record)
        if progress is not None:
            progress(record)
    return classifiers, logs
