"""Ready-made worlds, task lists, and initial-state sampling."""

from __future__ import annotations

import random
from typing import Iterable

from .crafting import (CraftingEnv, CraftingRule, GridState, ResourceRule,
                       STRUCTURAL_TYPES, WorldConfig)
from .tasklang import TaskAst, atoms

DEFAULT_SUBGOALS = (
    ("craft-boat", ("has-item", "boat")),
    ("craft-iron-ingot", ("has-item", "iron-ingot")),
    ("craft-stick", ("has-item", "stick")),
    ("craft-wood-plank", ("has-item", "wood-plank")),
    ("grab-axe", ("has-item", "axe")),
    ("grab-key", ("has-item", "key")),
    ("grab-pickaxe", ("has-item", "pickaxe")),
    ("mine-coal", ("has-item", "coal")),
    ("mine-gold-ore", ("has-item", "gold-ore")),
    ("mine-iron-ore", ("has-item", "iron-ore")),
    ("mine-wood", ("has-item", "wood")),
    ("toggle-switch", ("switch-on",)),
)

DEFAULT_RULES = (
    CraftingRule(output="wood-plank", ingredients=("wood",), station="workbench"),
    CraftingRule(output="boat", ingredients=("stick", "wood-plank"),
                 station="workbench"),
    CraftingRule(output="stick", ingredients=("wood-plank",), station="workbench"),
    CraftingRule(output="iron-ingot", ingredients=("coal", "iron-ore"),
                 station="furnace"),
)

DEFAULT_RESOURCES = (
    ResourceRule(resource="tree", yields="wood", tool="axe"),
    ResourceRule(resource="coal-deposit", yields="coal", tool="pickaxe"),
    ResourceRule(resource="iron-ore-deposit", yields="iron-ore", tool="pickaxe"),
    ResourceRule(resource="gold-ore-deposit", yields="gold-ore", tool="pickaxe"),
)


def default_world() -> WorldConfig:
    """A 7x7 world with every default subgoal reachable.

    The gold deposit sits in a one-cell alcove behind a door, so mining
    gold requires the key or the switch.
    """
    placements = (
        (0, 0, "gold-ore-deposit", "present"),
        (1, 0, "door", "closed"),
        (5, 0, "switch", "off"),
        (6, 0, "iron-ore-deposit", "present"),
        (0, 1, "wall", "present"),
        (1, 1, "wall", "present"),
        (4, 1, "pickaxe", "present"),
        (3, 2, "wall", "present"),
        (6, 2, "coal-deposit", "present"),
        (2, 3, "axe", "present"),
        (5, 3, "furnace", "present"),
        (3, 4, "workbench", "present"),
        (1, 5, "tree", "present"),
        (5, 5, "tree", "present"),
        (3, 6, "key", "present"),
    )
    return WorldConfig(width=7, height=7, capacity=8, placements=placements,
                       rules=DEFAULT_RULES, resources=DEFAULT_RESOURCES,
                       subgoals=DEFAULT_SUBGOALS)


def river_world() -> WorldConfig:
    """A 5x5 world split by a river; the boat item sits on the near bank."""
    placements = (
        (2, 0, "river", "present"),
        (2, 1, "river", "present"),
        (2, 2, "river", "present"),
        (2, 3, "river", "present"),
        (2, 4, "river", "present"),
        (0, 2, "boat", "present"),
        (4, 2, "key", "present"),
    )
    return WorldConfig(width=5, height=5, capacity=4, placements=placements,
                       rules=DEFAULT_RULES, resources=DEFAULT_RESOURCES,
                       subgoals=DEFAULT_SUBGOALS)


# Desk-scale corpus: six single-subgoal tasks and six compositions.  The
# compositions trace the tool-to-product chains so that precedence counts
# have signal in them.
TRAINING_TASKS = (
    "grab-axe",
    "grab-pickaxe",
    "mine-wood",
    "mine-coal",
    "mine-iron-ore",
    "craft-wood-plank",
    "grab-axe then mine-wood",
    "mine-wood then craft-wood-plank",
    "craft-wood-plank then craft-stick",
    "craft-wood-plank then craft-boat",
    "grab-pickaxe then (mine-iron-ore and mine-coal)",
    "(mine-iron-ore and mine-coal) then craft-iron-ingot",
)

# Novel recompositions of trained subgoals, never used for training.
HELDOUT_TASKS = (
    "grab-axe then mine-wood then craft-wood-plank",
    "mine-wood and mine-coal",
    "grab-pickaxe then mine-coal",
    "(grab-axe then mine-wood) or mine-iron-ore",
)

# Final goals for single-goal search, each 3+ subgoals deep from an empty
# inventory.
GOAL_TASKS = ("craft-wood-plank", "craft-iron-ingot", "craft-boat")


def subgoal_requirements(env: CraftingEnv, name: str) -> tuple[set[str], set[str]]:
    """(items required, items provided) for completing one subgoal.

    Requirements are direct only: a craft subgoal needs its rule's
    ingredients and tool, a mine subgoal needs the mining tool, a grab
    subgoal needs nothing.
    """
    spec = dict(env.config.subgoals)[name]
    if spec[0] != "has-item":
        return set(), set()
    item = spec[1]
    needs: set[str] = set()
    for rule in env.config.rules:
        if rule.output == item:
            needs.update(rule.ingredients)
            if rule.tool:
                needs.add(rule.tool)
            return needs, {item}
    for res in env.config.resources:
        if res.yields == item:
            if res.tool:
                needs.add(res.tool)
            return needs, {item}
    return needs, {item}


def required_start_items(env: CraftingEnv, task: TaskAst) -> tuple[str, ...]:
    """Items the agent must start with: direct requirements of the task's
    subgoals that no other subgoal in the task provides."""
    needs: set[str] = set()
    provided: set[str] = set()
    for name in atoms(task):
        n, p = subgoal_requirements(env, name)
        needs |= n
        provided |= p
    return tuple(sorted(needs - provided))


def sample_initial_state(env: CraftingEnv, rng: random.Random,
                         inventory: Iterable[str] = (),
                         shuffle: bool = True) -> GridState:
    """Reset state with a random agent cell; optionally shuffle the
    non-structural objects (items, resources, stations) onto fresh cells.

    Walls, doors, rivers and switches stay put so map connectivity is
    unchanged.
    """
    structural = [p for p in env.config.placements if p[2] in STRUCTURAL_TYPES]
    movable = [p for p in env.config.placements if p[2] not in STRUCTURAL_TYPES]
    if shuffle:
        blocked = {(x, y) for x, y, _t, _s in structural}
        candidates = [(x, y) for y in range(env.config.height)
                      for x in range(env.config.width) if (x, y) not in blocked]
        cells = rng.sample(candidates, len(movable))
        movable = [(x, y, otype, ostate)
                   for (x, y), (_ox, _oy, otype, ostate) in zip(cells, movable)]
    objects = tuple(sorted(structural + movable))
    occupied = {(x, y) for x, y, _t, _s in objects}
    open_cells = [(x, y) for y in range(env.config.height)
                  for x in range(env.config.width) if (x, y) not in occupied]
    agent = rng.choice(open_cells)
    return GridState(agent=agent, inventory=tuple(sorted(inventory)),
                     objects=objects)
