"""Deterministic grid crafting environment.

An agent moves on a small grid, picks up tools, mines resources (tool
gated), and crafts items at stations (ingredient and station gated).
Walls always block; doors block unless opened by the switch or the agent
holds a key; rivers block unless the agent holds a boat.  All transitions
are pure functions of (state, action).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

ACTIONS = ("up", "down", "left", "right", "toggle")
MOVE_DELTAS = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0)}
STEP_COST = 0.1

# object types with built-in behavior; everything else placed on the map is
# either a resource, a station (per the config) or a pickable item
STRUCTURAL_TYPES = ("wall", "door", "river", "switch")

WORLD_FORMAT = "subgoals-world"
WORLD_VERSION = 1


class WorldConfigError(ValueError):
    pass


class UnknownSubgoalError(KeyError):
    pass


@dataclass(frozen=True)
class CraftingRule:
    output: str
    ingredients: tuple[str, ...]
    station: str | None = None
    tool: str | None = None

    def __post_init__(self):
        if not self.ingredients:
            raise WorldConfigError(f"rule for {self.output} has no ingredients")
        if self.output in self.ingredients:
            raise WorldConfigError(f"rule for {self.output} consumes itself")


@dataclass(frozen=True)
class ResourceRule:
    resource: str
    yields: str
    tool: str | None = None


@dataclass(frozen=True)
class WorldConfig:
    width: int
    height: int
    capacity: int
    placements: tuple[tuple[int, int, str, str], ...]
    rules: tuple[CraftingRule, ...]
    resources: tuple[ResourceRule, ...]
    subgoals: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        for x, y, otype, _state in self.placements:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise WorldConfigError(f"{otype} at ({x},{y}) out of bounds")
        seen_cells = set()
        for x, y, otype, _state in self.placements:
            if (x, y) in seen_cells:
                raise WorldConfigError(f"two objects share cell ({x},{y})")
            seen_cells.add((x, y))


@dataclass(frozen=True)
class GridState:
    """Agent pose, inventory multiset, and per-cell object states."""

    agent: tuple[int, int]
    inventory: tuple[str, ...]
    objects: tuple[tuple[int, int, str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "_hash",
                           hash((self.agent, self.inventory, self.objects)))

    def __hash__(self):
        return self._hash  # type: ignore[attr-defined]

    def has(self, item: str) -> bool:
        return item in self.inventory

    def count(self, item: str) -> int:
        return sum(1 for it in self.inventory if it == item)


def _state_replace(state: GridState, agent=None, inventory=None,
                   objects=None) -> GridState:
    return GridState(
        agent=state.agent if agent is None else agent,
        inventory=state.inventory if inventory is None else tuple(sorted(inventory)),
        objects=state.objects if objects is None else tuple(sorted(objects)),
    )


class CraftingEnv:
    """Bundles a world config with memoized transition and feature maps.

    The config is immutable; the caches only memoize pure functions, so a
    single env instance can serve many rollouts.
    """

    def __init__(self, config: WorldConfig):
        self.config = config
        self._resource_for = {r.resource: r for r in config.resources}
        self._station_types = {r.station for r in config.rules if r.station}
        self._object_types = tuple(sorted({p[2] for p in config.placements}))
        self._item_types = self._collect_item_types()
        self._subgoal_specs = dict(config.subgoals)
        self._feature_names = self._build_schema()
        self._trans_cache: dict[tuple[GridState, str], GridState] = {}
        self._feat_cache: dict[GridState, np.ndarray] = {}

    def _collect_item_types(self) -> tuple[str, ...]:
        items = set()
        for rule in self.config.rules:
            items.add(rule.output)
            items.update(rule.ingredients)
            if rule.tool:
                items.add(rule.tool)
        for res in self.config.resources:
            items.add(res.yields)
            if res.tool:
                items.add(res.tool)
        for _x, _y, otype, _state in self.config.placements:
            if not self._is_structural(otype) and otype not in self._station_types \
                    and otype not in self._resource_for:
                items.add(otype)
        return tuple(sorted(items))

    @staticmethod
    def _is_structural(otype: str) -> bool:
        return otype in STRUCTURAL_TYPES

    # -- basic accessors ----------------------------------------------------

    @property
    def item_types(self) -> tuple[str, ...]:
        return self._item_types

    @property
    def object_types(self) -> tuple[str, ...]:
        return self._object_types

    def subgoal_names(self) -> tuple[str, ...]:
        return tuple(name for name, _spec in self.config.subgoals)

    def initial_state(self, agent: tuple[int, int] | None = None,
                      inventory: Iterable[str] = ()) -> GridState:
        """State with the config's placements; agent defaults to the first
        free cell."""
        if agent is None:
            agent = self.free_cells()[0]
        state = GridState(agent=agent, inventory=tuple(sorted(inventory)),
                          objects=tuple(sorted(self.config.placements)))
        if self.is_blocked(state, agent):
            raise WorldConfigError(f"agent start {agent} is blocked")
        return state

    def free_cells(self) -> list[tuple[int, int]]:
        """Cells with no object on them, row-major order."""
        occupied = {(x, y) for x, y, _t, _s in self.config.placements}
        return [(x, y) for y in range(self.config.height)
                for x in range(self.config.width) if (x, y) not in occupied]

    def objects_at(self, state: GridState, cell: tuple[int, int]):
        return [obj for obj in state.objects if (obj[0], obj[1]) == cell]

    def is_blocked(self, state: GridState, cell: tuple[int, int]) -> bool:
        for _x, _y, otype, ostate in self.objects_at(state, cell):
            if otype == "wall":
                return True
            if otype == "door" and ostate == "closed" and not state.has("key"):
                return True
            if otype == "river" and not state.has("boat"):
                return True
        return False

    # -- transition model ----------------------------------------------------

    def transition(self, state: GridState, action: str) -> GridState:
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        key = (state, action)
        cached = self._trans_cache.get(key)
        if cached is not None:
            return cached
        if action == "toggle":
            result = self._toggle(state)
        else:
            dx, dy = MOVE_DELTAS[action]
            tx, ty = state.agent[0] + dx, state.agent[1] + dy
            if (0 <= tx < self.config.width and 0 <= ty < self.config.height
                    and not self.is_blocked(state, (tx, ty))):
                result = _state_replace(state, agent=(tx, ty))
            else:
                result = state
        self._trans_cache[key] = result
        return result

    def _toggle(self, state: GridState) -> GridState:
        here = self.objects_at(state, state.agent)
        if not here:
            return state
        x, y, otype, ostate = here[0]
        capacity = self.config.capacity

        if otype == "switch":
            new_switch = "on" if ostate == "off" else "off"
            door_state = "open" if new_switch == "on" else "closed"
            objects = []
            for obj in state.objects:
                if obj == (x, y, otype, ostate):
                    objects.append((x, y, otype, new_switch))
                elif obj[2] == "door":
                    objects.append((obj[0], obj[1], "door", door_state))
                else:
                    objects.append(obj)
            return _state_replace(state, objects=objects)

        if otype in self._resource_for:
            rule = self._resource_for[otype]
            if ostate != "present":
                return state
            if rule.tool and not state.has(rule.tool):
                return state
            if len(state.inventory) >= capacity:
                return state
            objects = [obj if obj != (x, y, otype, ostate)
                       else (x, y, otype, "mined") for obj in state.objects]
            return _state_replace(state, inventory=state.inventory + (rule.yields,),
                                  objects=objects)

        if otype in self._station_types:
            inv = list(state.inventory)
            for rule in self.config.rules:
                if rule.station != otype:
                    continue
                if rule.tool and rule.tool not in inv:
                    continue
                needed = list(rule.ingredients)
                pool = list(inv)
                if all(_take(pool, item) for item in needed):
                    return _state_replace(state, inventory=pool + [rule.output])
            return state

        if self._is_structural(otype):
            return state

        # a pickable item
        if len(state.inventory) >= capacity:
            return state
        objects = [obj for obj in state.objects if obj != (x, y, otype, ostate)]
        return _state_replace(state, inventory=state.inventory + (otype,),
                              objects=objects)

    def step_cost(self, state: GridState, action: str) -> float:
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        return STEP_COST

    # -- ground-truth subgoal predicates --------------------------------------

    def oracle_goal(self, name: str) -> Callable[[GridState], bool]:
        spec = self._subgoal_specs.get(name)
        if spec is None:
            raise UnknownSubgoalError(name)
        if spec[0] == "has-item":
            item = spec[1]
            return lambda s: item in s.inventory
        if spec[0] == "switch-on":
            return lambda s: any(o[2] == "switch" and o[3] == "on"
                                 for o in s.objects)
        raise WorldConfigError(f"unknown subgoal spec {spec!r}")

    def oracle_tests(self) -> Mapping[str, Callable[[GridState], bool]]:
        return {name: self.oracle_goal(name) for name in self.subgoal_names()}

    # -- featurization ---------------------------------------------------------

    def _build_schema(self) -> tuple[str, ...]:
        names = [f"inv:{item}" for item in self._item_types]
        names += [f"map:{otype}" for otype in self._object_types]
        names += [f"near:{otype}" for otype in self._object_types]
        names += ["door-open", "switch-on"]
        return tuple(names)

    @property
    def feature_schema(self) -> tuple[str, ...]:
        return self._feature_names

    def features(self, state: GridState) -> np.ndarray:
        """Binary feature vector; schema is fixed for this config."""
        cached = self._feat_cache.get(state)
        if cached is not None:
            return cached
        inv = set(state.inventory)
        present: set[str] = set()
        near: set[str] = set()
        ax, ay = state.agent
        door_open = 0.0
        switch_on = 0.0
        for x, y, otype, ostate in state.objects:
            if ostate == "mined":
                continue
            present.add(otype)
            if abs(x - ax) + abs(y - ay) <= 1:
                near.add(otype)
            if otype == "door" and ostate == "open":
                door_open = 1.0
            if otype == "switch" and ostate == "on":
                switch_on = 1.0
        values = [1.0 if item in inv else 0.0 for item in self._item_types]
        values += [1.0 if t in present else 0.0 for t in self._object_types]
        values += [1.0 if t in near else 0.0 for t in self._object_types]
        values += [door_open, switch_on]
        vec = np.array(values, dtype=np.float64)
        vec.setflags(write=False)
        self._feat_cache[state] = vec
        return vec

    def schema_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self._feature_names).encode("utf-8"))
        return digest.hexdigest()

    # -- rendering --------------------------------------------------------------

    GLYPHS = {"wall": "#", "river": "~", "workbench": "W", "furnace": "F",
              "switch": "s", "door": "d", "tree": "T", "coal-deposit": "c",
              "iron-ore-deposit": "i", "gold-ore-deposit": "g",
              "axe": "a", "pickaxe": "p", "key": "k", "boat": "b"}

    def render(self, state: GridState,
               path: Iterable[tuple[int, int]] = ()) -> str:
        grid = [["." for _ in range(self.config.width)]
                for _ in range(self.config.height)]
        for cell in path:
            grid[cell[1]][cell[0]] = "*"
        for x, y, otype, ostate in state.objects:
            glyph = self.GLYPHS.get(otype, otype[0])
            if otype == "door" and ostate == "open":
                glyph = "/"
            if otype == "switch" and ostate == "on":
                glyph = "S"
            if ostate == "mined":
                glyph = glyph.lower()
            grid[y][x] = glyph
        ax, ay = state.agent
        grid[ay][ax] = "@"
        return "\n".join("".join(row) for row in grid)


def _take(pool: list[str], item: str) -> bool:
    try:
        pool.remove(item)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# World and state serialization
# ---------------------------------------------------------------------------

def config_to_json(config: WorldConfig) -> dict:
    return {
        "format": WORLD_FORMAT,
        "version": WORLD_VERSION,
        "width": config.width,
        "height": config.height,
        "capacity": config.capacity,
        "objects": [list(p) for p in config.placements],
        "rules": [{"output": r.output, "ingredients": list(r.ingredients),
                   "station": r.station, "tool": r.tool}
                  for r in config.rules],
        "resources": [{"resource": r.resource, "yields": r.yields,
                       "tool": r.tool} for r in config.resources],
        "subgoals": {name: list(spec) for name, spec in config.subgoals},
    }


def config_from_json(data: dict) -> WorldConfig:
    if data.get("format") != WORLD_FORMAT:
        raise WorldConfigError(f"not a world file: format={data.get('format')!r}")
    if data.get("version") != WORLD_VERSION:
        raise WorldConfigError(f"unsupported world version {data.get('version')!r}")
    return WorldConfig(
        width=data["width"],
        height=data["height"],
        capacity=data["capacity"],
        placements=tuple(tuple(p) for p in data["objects"]),
        rules=tuple(CraftingRule(output=r["output"],
                                 ingredients=tuple(r["ingredients"]),
                                 station=r.get("station"),
                                 tool=r.get("tool")) for r in data["rules"]),
        resources=tuple(ResourceRule(resource=r["resource"],
                                     yields=r["yields"],
                                     tool=r.get("tool"))
                        for r in data["resources"]),
        subgoals=tuple(sorted((name, tuple(spec))
                              for name, spec in data["subgoals"].items())),
    )


def save_world(path, config: WorldConfig) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(config_to_json(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_world(path) -> WorldConfig:
    with open(path, "r", encoding="ascii") as fh:
        return config_from_json(json.load(fh))


def state_to_json(state: GridState) -> dict:
    return {"agent": list(state.agent),
            "inventory": list(state.inventory),
            "objects": [list(o) for o in state.objects]}


def state_from_json(data: dict) -> GridState:
    return GridState(agent=tuple(data["agent"]),
                     inventory=tuple(data["inventory"]),
                     objects=tuple(tuple(o) for o in data["objects"]))
