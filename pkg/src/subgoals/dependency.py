"""Subgoal precedence discovery and single-goal instruction search.

Precedence counts come from thresholded classifier outputs over training
trajectories: subgoal ``b`` counts as achieved before ``a`` on a
trajectory when both are mentioned in its task, both first fire, and
``b`` fires earlier.  Row-normalized counts give the probability that a
subgoal is a precondition of another, which prioritizes candidate
``then``-chain instructions when only a final goal is given.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, replace

import numpy as np

from .crafting import CraftingEnv, GridState
from .demos import Demonstration
from .fsm import compile_task
from .planner import Plan, PlannerConfig, plan
from .tasklang import Atom, TaskAst, Then, atoms, unparse


_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ClassifierThresholds:
    """Per-subgoal decision thresholds: the geometric mean of the extreme
    classifier outputs over the training states.

    Extremes are floored at a tiny positive value so that hard 0/1
    classifiers still get a separating threshold instead of zero.
    """

    stats: tuple[tuple[str, float, float], ...]  # (name, min, max)

    def threshold(self, name: str) -> float:
        for entry, lo, hi in self.stats:
            if entry == name:
                return math.sqrt(max(lo, _PROB_FLOOR) * max(hi, _PROB_FLOOR))
        raise KeyError(name)

    def as_dict(self) -> dict[str, float]:
        return {name: self.threshold(name) for name, _lo, _hi in self.stats}


def compute_thresholds(demos, provider) -> ClassifierThresholds:
    """Extreme goal-classifier outputs over every state in the dataset."""
    if not demos:
        raise ValueError("empty dataset")
    lo = np.full(len(provider.subgoals), math.inf)
    hi = np.full(len(provider.subgoals), -math.inf)
    for demo in demos:
        for state in demo.states:
            log_goal, _ = provider.log_state(state)
            probs = np.exp(log_goal)
            np.minimum(lo, probs, out=lo)
            np.maximum(hi, probs, out=hi)
    return ClassifierThresholds(tuple(
        (name, float(lo[i]), float(hi[i]))
        for i, name in enumerate(provider.subgoals)))


def first_index(states, name: str, provider,
                thresholds: ClassifierThresholds,
                task: TaskAst | None = None) -> float:
    """1-based index of the first state whose thresholded goal output fires.

    Infinite when it never fires, or when the subgoal is not mentioned in
    the trajectory's task description.
    """
    if task is not None and name not in atoms(task):
        return math.inf
    cut = thresholds.threshold(name)
    column = provider.index[name]
    for i, state in enumerate(states):
        if math.exp(provider.log_state(state)[0][column]) >= cut:
            return i + 1
    return math.inf


@dataclass(frozen=True)
class DependencyMatrix:
    subgoals: tuple[str, ...]
    d: np.ndarray
    bcount: np.ndarray

    def value(self, o1: str, o2: str) -> float:
        i = self.subgoals.index(o1)
        j = self.subgoals.index(o2)
        return float(self.d[i, j])

    def row(self, o1: str) -> dict[str, float]:
        i = self.subgoals.index(o1)
        return {name: float(self.d[i, j])
                for j, name in enumerate(self.subgoals)}

    def top_predecessors(self, o1: str, count: int = 3) -> list[tuple[str, float]]:
        row = self.row(o1)
        ranked = sorted(row.items(), key=lambda kv: (-kv[1], kv[0]))
        return [(name, val) for name, val in ranked[:count] if val > 0]


def uniform_matrix(subgoals) -> DependencyMatrix:
    """The no-discovery baseline: every other subgoal equally likely to be
    a precondition."""
    names = tuple(subgoals)
    n = len(names)
    d = np.full((n, n), 1.0 / max(n - 1, 1))
    np.fill_diagonal(d, 0.0)
    bcount = np.ones((n, n)) - np.eye(n)
    return DependencyMatrix(names, d, bcount)


def discover(demos, provider,
             thresholds: ClassifierThresholds | None = None) -> DependencyMatrix:
    """Row-normalized before-counts across the dataset."""
    if thresholds is None:
        thresholds = compute_thresholds(demos, provider)
    names = tuple(provider.subgoals)
    pos = {name: i for i, name in enumerate(names)}
    bcount = np.zeros((len(names), len(names)))
    for demo in demos:
        mentioned = sorted(set(atoms(demo.task)))
        firsts = {name: first_index(demo.states, name, provider, thresholds,
                                    demo.task)
                  for name in mentioned}
        for o1 in mentioned:
            for o2 in mentioned:
                if o1 == o2:
                    continue
                if math.isfinite(firsts[o1]) and math.isfinite(firsts[o2]) \
                        and firsts[o2] < firsts[o1]:
                    bcount[pos[o1], pos[o2]] += 1
    totals = bcount.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(totals > 0, bcount / totals, 0.0)
    return DependencyMatrix(names, d, bcount)


def matrix_table(matrix: DependencyMatrix) -> str:
    """Labeled text table of the dependency matrix."""
    names = matrix.subgoals
    width = max(len(n) for n in names) + 2
    header = " " * width + "".join(f"{n:>{width}}" for n in names)
    lines = [header]
    for i, name in enumerate(names):
        cells = "".join(f"{matrix.d[i, j]:>{width}.3f}"
                        for j in range(len(names)))
        lines.append(f"{name:<{width}}" + cells)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Goal-only search over candidate instructions
# ---------------------------------------------------------------------------

def priority(instruction, matrix: DependencyMatrix,
             length_bias: float = 0.9) -> float:
    """Worth of a candidate instruction chain.

    Shorter chains score higher through the length-bias power, and every
    non-final element must look like a precondition of at least one later
    element, else its factor collapses to zero.
    """
    k = len(instruction)
    if k < 1:
        raise ValueError("instructions need at least one subgoal")
    result = length_bias ** k
    for i in range(k - 1):
        miss = 1.0
        for j in range(i + 1, k):
            miss *= 1.0 - matrix.value(instruction[j], instruction[i])
        result *= 1.0 - miss
    return result


@dataclass(frozen=True)
class GoalSearchConfig:
    length_limit: int = 6
    length_bias: float = 0.9
    total_budget: int | None = 25000
    attempt_budget: int | None = 2000
    search: PlannerConfig = PlannerConfig()
    seed: int = 0


@dataclass
class AttemptRecord:
    instruction: tuple[str, ...]
    expanded: int
    success: bool


@dataclass
class GoalSearchResult:
    success: bool
    plan: Plan | None
    instruction: tuple[str, ...] | None
    expanded: int
    attempts: list[AttemptRecord]


def instruction_task(instruction) -> TaskAst:
    parts = tuple(Atom(name) for name in instruction)
    return parts[0] if len(parts) == 1 else Then(parts)


def plan_to_goal(goal: str, env: CraftingEnv, provider,
                 matrix: DependencyMatrix, s0: GridState,
                 config: GoalSearchConfig,
                 blind: bool = False) -> GoalSearchResult:
    """Try instructions ending in the goal, best priority first.

    Candidates grow by prepending subgoals that the dependency matrix
    marks as a precondition of something already in the instruction, up to
    the length limit; ties break shorter-then-lexicographic.  One shared
    expansion budget covers all attempts.  In blind mode only the bare
    goal is tried, against the whole budget.
    """
    if goal not in provider.index:
        raise KeyError(f"unknown subgoal {goal!r}")
    rng = random.Random(config.seed)
    heap: list[tuple[float, int, tuple[str, ...]]] = []
    start: tuple[str, ...] = (goal,)
    heapq.heappush(heap, (-priority(start, matrix, config.length_bias),
                          len(start), start))
    seen = {start}
    expanded_total = 0
    attempts: list[AttemptRecord] = []
    while heap:
        _neg, _len, instruction = heapq.heappop(heap)
        remaining = (None if config.total_budget is None
                     else config.total_budget - expanded_total)
        if remaining is not None and remaining <= 0:
            break
        attempt_cap = remaining if blind else config.attempt_budget
        if attempt_cap is not None and remaining is not None:
            attempt_cap = min(attempt_cap, remaining)
        machine = compile_task(instruction_task(instruction))
        search = replace(config.search, total_budget=attempt_cap)
        result = plan(env, machine, provider, search, s0, rng=rng)
        expanded_total += result.expanded
        attempts.append(AttemptRecord(instruction, result.expanded,
                                      result.success))
        if result.success:
            return GoalSearchResult(True, result.plan, instruction,
                                    expanded_total, attempts)
        if blind:
            continue
        if len(instruction) < config.length_limit:
            for name in matrix.subgoals:
                if name in instruction:
                    continue
                if not any(matrix.value(present, name) > 0
                           for present in instruction):
                    continue
                grown = (name,) + instruction
                if grown in seen:
                    continue
                seen.add(grown)
                heapq.heappush(
                    heap, (-priority(grown, matrix, config.length_bias),
                           len(grown), grown))
    return GoalSearchResult(False, None, None, expanded_total, attempts)
