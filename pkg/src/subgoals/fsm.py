"""Compile task ASTs into finite state machines over subgoal nodes.

The machine for a task is acyclic.  Labeled nodes carry a subgoal name;
two unlabeled super nodes bracket the machine so that every accepting path
runs from the unique start node to the unique final node.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

from .tasklang import And, Atom, Or, SubgoalName, TaskAst, Then


@dataclass(frozen=True)
class Fsm:
    """Compiled task machine.

    ``labels[i]`` is the subgoal name of node ``i`` (None for the two super
    nodes).  ``entry_ids`` / ``exit_ids`` are the start and terminal sets
    of the construction before the super nodes were added, kept for
    inspection.
    """

    labels: tuple[SubgoalName | None, ...]
    edges: tuple[tuple[int, int], ...]
    entry_ids: frozenset[int]
    exit_ids: frozenset[int]
    start_node: int
    final_node: int
    successors: tuple[tuple[int, ...], ...]
    predecessors: tuple[tuple[int, ...], ...]

    @property
    def node_count(self) -> int:
        return len(self.labels)

    def node_ids(self) -> range:
        return range(len(self.labels))

    def labeled_ids(self) -> tuple[int, ...]:
        return tuple(i for i, lab in enumerate(self.labels) if lab is not None)

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.successors[u]


def compile_task(task: TaskAst) -> Fsm:
    """Build the machine for a task.

    ``then`` joins the parts with every terminal of the earlier part wired
    to every start of the later part; ``or`` is a plain union; ``and`` over
    n children lays out one sub-machine copy per (child, completed-set)
    pair across n layers, so each child is copied 2^(n-1) times.
    """
    labels: list[SubgoalName | None] = []
    edges: list[tuple[int, int]] = []

    def new_node(label: SubgoalName | None) -> int:
        labels.append(label)
        return len(labels) - 1

    def build(t: TaskAst) -> tuple[frozenset[int], frozenset[int]]:
        if isinstance(t, Atom):
            nid = new_node(t.name)
            return frozenset([nid]), frozenset([nid])
        if isinstance(t, Then):
            entries, exits = build(t.children[0])
            for child in t.children[1:]:
                c_entries, c_exits = build(child)
                for u in sorted(exits):
                    for v in sorted(c_entries):
                        edges.append((u, v))
                exits = c_exits
            return entries, exits
        if isinstance(t, Or):
            entries: set[int] = set()
            exits: set[int] = set()
            for child in t.children:
                c_entries, c_exits = build(child)
                entries |= c_entries
                exits |= c_exits
            return frozenset(entries), frozenset(exits)
        # And: one sub-machine per (child, set of already-done children),
        # organized in layers by how many children are done.
        n = len(t.children)
        sub: dict[tuple[int, frozenset[int]], tuple[frozenset[int], frozenset[int]]] = {}
        for done_count in range(n):
            for chosen in itertools.combinations(range(n), done_count):
                done = frozenset(chosen)
                for c in range(n):
                    if c not in done:
                        sub[(c, done)] = build(t.children[c])
        for (c1, done1), (_, exits1) in sub.items():
            done2 = done1 | {c1}
            for c2 in range(n):
                if c2 not in done2:
                    entries2 = sub[(c2, done2)][0]
                    for u in sorted(exits1):
                        for v in sorted(entries2):
                            edges.append((u, v))
        all_done = frozenset(range(n))
        entries = frozenset().union(
            *(sub[(c, frozenset())][0] for c in range(n)))
        exits = frozenset().union(
            *(sub[(c, all_done - {c})][1] for c in range(n)))
        return entries, exits

    entry_ids, exit_ids = build(task)
    start = new_node(None)
    final = new_node(None)
    for v in sorted(entry_ids):
        edges.append((start, v))
    for u in sorted(exit_ids):
        edges.append((u, final))

    count = len(labels)
    succ: list[list[int]] = [[] for _ in range(count)]
    pred: list[list[int]] = [[] for _ in range(count)]
    for u, v in edges:
        succ[u].append(v)
        pred[v].append(u)
    return Fsm(
        labels=tuple(labels),
        edges=tuple(edges),
        entry_ids=entry_ids,
        exit_ids=exit_ids,
        start_node=start,
        final_node=final,
        successors=tuple(tuple(sorted(s)) for s in succ),
        predecessors=tuple(tuple(sorted(p)) for p in pred),
    )


def topological_order(fsm: Fsm) -> tuple[int, ...]:
    """Node ids so that all edges point forward; start first, final last.

    Ties break on node id, so the order is deterministic.  Raises on a
    cycle, which would indicate a compiler bug.
    """
    indegree = [len(fsm.predecessors[i]) for i in fsm.node_ids()]
    ready = [i for i in fsm.node_ids() if indegree[i] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for succ in fsm.successors[node]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                heapq.heappush(ready, succ)
    if len(order) != fsm.node_count:
        raise ValueError("cycle detected in compiled machine")
    # every node lies on a start->final path, so these hold by construction
    if order[0] != fsm.start_node or order[-1] != fsm.final_node:
        raise ValueError("super nodes out of place in topological order")
    return tuple(order)


def _node_text(fsm: Fsm, node: int) -> str:
    if node == fsm.start_node:
        return "v0"
    if node == fsm.final_node:
        return "vT"
    return f"n{node}[{fsm.labels[node]}]"


def edge_list_text(fsm: Fsm) -> str:
    """Plain-text edge list (one ``u -> v`` line), for debugging and golden
    files."""
    lines = [f"{_node_text(fsm, u)} -> {_node_text(fsm, v)}"
             for u, v in sorted(fsm.edges)]
    return "\n".join(lines) + "\n"
