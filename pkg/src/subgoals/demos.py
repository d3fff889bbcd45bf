"""Expert demonstration generation and JSONL dataset files."""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass

from .classifiers import OracleProvider
from .crafting import (CraftingEnv, GridState, WorldConfig, config_from_json,
                       config_to_json, state_from_json, state_to_json)
from .fsm import compile_task
from .planner import PlannerConfig, is_primitive, plan
from .presets import required_start_items, sample_initial_state
from .tasklang import TaskAst, parse_task, satisfies, unparse

DATASET_FORMAT = "subgoals-demos"
DATASET_VERSION = 1

_NOISE_MOVES = ("up", "down", "left", "right")


class DemoGenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Demonstration:
    states: tuple[GridState, ...]
    actions: tuple[str, ...]
    task: TaskAst

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("need exactly one more state than actions")


def generate_demo(env: CraftingEnv, task: TaskAst, seed: int,
                  noise: float = 0.05,
                  search: PlannerConfig | None = None,
                  shuffle: bool = True,
                  inventory: tuple[str, ...] | None = None,
                  max_attempts: int = 10) -> Demonstration:
    """Roll out a near-expert demonstration for one task.

    The trajectory comes from planning with the ground-truth predicates as
    hard classifiers.  The start inventory holds the items the task
    requires but does not itself provide.  With probability ``noise`` each
    executed step is replaced by a random move (moves never consume
    anything, so they only lengthen the solution), after which the
    remainder is replanned.
    """
    rng = random.Random(seed)
    machine = compile_task(task)
    provider = OracleProvider(env)
    search = search or PlannerConfig()
    if inventory is None:
        inventory = required_start_items(env, task)
    for _attempt in range(max_attempts):
        s0 = sample_initial_state(env, rng, inventory=inventory, shuffle=shuffle)
        demo = _rollout(env, machine, provider, search, s0, rng, noise, task)
        if demo is not None and satisfies(demo.states, task, env.oracle_tests()):
            return demo
    raise DemoGenerationError(
        f"could not produce a demonstration for {unparse(task)!r} "
        f"after {max_attempts} attempts (seed {seed})")


def _rollout(env, machine, provider, search, s0, rng, noise, task):
    result = plan(env, machine, provider, search, s0, rng=rng)
    if not result.success:
        return None
    states = [s0]
    actions: list[str] = []
    node = machine.start_node
    queue = deque(result.plan.actions)
    step_limit = 20 * len(result.plan.actions) + 100
    while queue:
        if len(actions) > step_limit:
            return None
        action = queue.popleft()
        if not is_primitive(action):
            node = action[1]
            continue
        if noise > 0 and rng.random() < noise:
            detour = rng.choice(_NOISE_MOVES)
            states.append(env.transition(states[-1], detour))
            actions.append(detour)
            result = plan(env, machine, provider, search, states[-1],
                          start_node=node, rng=rng)
            if not result.success:
                return None
            queue = deque(result.plan.actions)
        else:
            states.append(env.transition(states[-1], action))
            actions.append(action)
    if not actions:
        return None
    return Demonstration(tuple(states), tuple(actions), task)


def validate_demo(env: CraftingEnv, demo: Demonstration) -> None:
    """Replay the actions and check determinism plus task satisfaction."""
    state = demo.states[0]
    for action, expected in zip(demo.actions, demo.states[1:]):
        state = env.transition(state, action)
        if state != expected:
            raise ValueError("demonstration does not replay deterministically")
    if not satisfies(demo.states, demo.task, env.oracle_tests()):
        raise ValueError("demonstration does not satisfy its task")


# ---------------------------------------------------------------------------
# Dataset files: a header line, then one demonstration per line
# ---------------------------------------------------------------------------

def save_dataset(path, config: WorldConfig, demos) -> None:
    with open(path, "w", encoding="ascii") as fh:
        header = {"format": DATASET_FORMAT, "version": DATASET_VERSION,
                  "world": config_to_json(config)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for demo in demos:
            record = {"task": unparse(demo.task),
                      "states": [state_to_json(s) for s in demo.states],
                      "actions": list(demo.actions)}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(path) -> tuple[WorldConfig, list[Demonstration]]:
    with open(path, "r", encoding="ascii") as fh:
        first = fh.readline()
        if not first:
            raise DatasetFormatError("empty dataset file")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"bad dataset header: {exc}") from exc
        if header.get("format") != DATASET_FORMAT:
            raise DatasetFormatError("not a demonstration dataset")
        if header.get("version") != DATASET_VERSION:
            raise DatasetFormatError(
                f"unsupported dataset version {header.get('version')!r}")
        config = config_from_json(header["world"])
        demos = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                demos.append(Demonstration(
                    states=tuple(state_from_json(s) for s in record["states"]),
                    actions=tuple(record["actions"]),
                    task=parse_task(record["task"])))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DatasetFormatError(
                    f"bad demonstration on line {line_no}: {exc}") from exc
    return config, demos
