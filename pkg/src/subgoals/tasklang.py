"""Task description language: atoms composed with ``then`` / ``or`` / ``and``.

A task string such as ``"grab-axe then (mine-wood or mine-coal)"`` parses
into a small AST.  A state sequence satisfies a task when the subgoal
boundary conditions hold recursively: an atom requires its goal test to be
false at the first state and true at the last one, ``then`` splits the
sequence at a shared boundary state, ``or`` is a disjunction, and ``and``
accepts any ordering of its children.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

SubgoalName = str

CONNECTIVES = ("then", "and", "or")


class TaskSyntaxError(ValueError):
    """Raised when a task string cannot be parsed; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownKeywordError(TaskSyntaxError):
    """A word appeared where a connective was required."""


@dataclass(frozen=True)
class Atom:
    name: SubgoalName

    def __post_init__(self):
        if not self.name:
            raise ValueError("subgoal name must be nonempty")


def _check_children(children: tuple) -> None:
    if len(children) < 2:
        raise ValueError("composite tasks need at least two children")


@dataclass(frozen=True)
class Then:
    children: "tuple[TaskAst, ...]"

    def __post_init__(self):
        _check_children(self.children)


@dataclass(frozen=True)
class Or:
    children: "tuple[TaskAst, ...]"

    def __post_init__(self):
        _check_children(self.children)


@dataclass(frozen=True)
class And:
    children: "tuple[TaskAst, ...]"

    def __post_init__(self):
        _check_children(self.children)


TaskAst = Atom | Then | Or | And

_NODE_KEYWORD = {Then: "then", Or: "or", And: "and"}
_KEYWORD_NODE = {v: k for k, v in _NODE_KEYWORD.items()}


def atoms(task: TaskAst) -> tuple[SubgoalName, ...]:
    """All leaf subgoal names, left to right (duplicates preserved)."""
    if isinstance(task, Atom):
        return (task.name,)
    out: list[SubgoalName] = []
    for child in task.children:
        out.extend(atoms(child))
    return tuple(out)


def leaf_count(task: TaskAst) -> int:
    if isinstance(task, Atom):
        return 1
    return sum(leaf_count(c) for c in task.children)


# ---------------------------------------------------------------------------
# Parsing and printing
# ---------------------------------------------------------------------------

def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "()":
            tokens.append((ch, ch, i))
            i += 1
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] in "-_"):
                j += 1
            word = text[i:j]
            kind = word if word in CONNECTIVES else "name"
            tokens.append((kind, word, i))
            i = j
            continue
        raise TaskSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


def parse_task(text: str) -> TaskAst:
    """Parse a task string.

    Chains of one connective flatten to a single n-ary node
    (``a and b and c``).  Mixing connectives at one level without
    parentheses is rejected: ``a then b or c`` is an error because the
    grouping would be ambiguous.
    """
    tokens = _tokenize(text)
    pos = 0

    def peek() -> tuple[str, str, int]:
        return tokens[pos]

    def advance() -> tuple[str, str, int]:
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        return tok

    def parse_term() -> TaskAst:
        kind, word, off = peek()
        if kind == "name":
            advance()
            return Atom(word)
        if kind == "(":
            advance()
            inner = parse_expr()
            kind2, _, off2 = peek()
            if kind2 != ")":
                raise TaskSyntaxError("expected ')'", off2)
            advance()
            return inner
        raise TaskSyntaxError("expected a subgoal name or '('", off)

    def parse_expr() -> TaskAst:
        items = [parse_term()]
        connective: str | None = None
        while True:
            kind, word, off = peek()
            if kind in CONNECTIVES:
                if connective is None:
                    connective = kind
                elif kind != connective:
                    raise TaskSyntaxError(
                        f"cannot mix '{connective}' and '{kind}' without "
                        "parentheses", off)
                advance()
                items.append(parse_term())
            elif kind == "name":
                raise UnknownKeywordError(
                    f"expected 'then', 'and' or 'or', got {word!r}", off)
            else:
                break
        if connective is None:
            return items[0]
        return _KEYWORD_NODE[connective](tuple(items))

    ast = parse_expr()
    kind, _, off = peek()
    if kind != "end":
        raise TaskSyntaxError(f"unexpected {kind!r}", off)
    return ast


def unparse(task: TaskAst) -> str:
    """Render a task back to its surface syntax; inverse of parse_task."""
    if isinstance(task, Atom):
        return task.name
    keyword = _NODE_KEYWORD[type(task)]
    parts = []
    for child in task.children:
        text = unparse(child)
        if not isinstance(child, Atom):
            text = f"({text})"
        parts.append(text)
    return f" {keyword} ".join(parts)


# ---------------------------------------------------------------------------
# Satisfaction semantics
# ---------------------------------------------------------------------------

GoalTests = Mapping[SubgoalName, Callable[[object], bool]]


def satisfies(states: Sequence, task: TaskAst, goal_tests: GoalTests) -> bool:
    """Whether a state sequence completes a task.

    An atom ``o`` holds on ``states[i..j]`` iff the goal test for ``o`` is
    false at ``states[i]``, true at ``states[j]``, and ``j > i`` (so a
    single state never completes anything).  ``then`` splits at a boundary
    state shared by both halves; ``and`` accepts any ordering of its
    children chained by ``then``.
    """
    if len(states) == 0:
        raise ValueError("empty state sequence")

    holds_memo: dict[tuple[SubgoalName, int], bool] = {}

    def holds(name: SubgoalName, i: int) -> bool:
        key = (name, i)
        if key not in holds_memo:
            holds_memo[key] = bool(goal_tests[name](states[i]))
        return holds_memo[key]

    sat_memo: dict[tuple, bool] = {}

    def sat(i: int, j: int, t: TaskAst) -> bool:
        key = (i, j, t)
        if key in sat_memo:
            return sat_memo[key]
        if isinstance(t, Atom):
            out = j > i and not holds(t.name, i) and holds(t.name, j)
        elif isinstance(t, Or):
            out = any(sat(i, j, c) for c in t.children)
        elif isinstance(t, Then):
            out = sat_chain(i, j, t.children)
        else:  # And
            out = any(sat_chain(i, j, perm)
                      for perm in itertools.permutations(t.children))
        sat_memo[key] = out
        return out

    def sat_chain(i: int, j: int, chain: tuple[TaskAst, ...]) -> bool:
        if len(chain) == 1:
            return sat(i, j, chain[0])
        head, rest = chain[0], chain[1:]
        return any(sat(i, m, head) and sat_chain(m, j, rest)
                   for m in range(i + 1, j))

    return sat(0, len(states) - 1, task)


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def _compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    # ordered positive integer compositions of `total` into `parts` parts
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_tasks(vocab: Iterable[SubgoalName],
                    max_atoms: int) -> set[TaskAst]:
    """All canonical tasks with at most ``max_atoms`` leaves.

    Canonical means no child shares its parent's connective (chains are
    flat) and ``and``/``or`` children are distinct and stored in sorted
    order, so the result is deduplicated up to child reordering.  ``then``
    children may repeat and keep their order.
    """
    if max_atoms < 1:
        raise ValueError("max_atoms must be at least 1")
    names = sorted(set(vocab))
    by_size: dict[int, list[TaskAst]] = {1: [Atom(n) for n in names]}

    for size in range(2, max_atoms + 1):
        found: list[TaskAst] = []
        # then: ordered compositions, children not themselves Then
        for parts in range(2, size + 1):
            for sizes in _compositions(size, parts):
                pools = [[t for t in by_size[s] if not isinstance(t, Then)]
                         for s in sizes]
                for combo in itertools.product(*pools):
                    found.append(Then(tuple(combo)))
        # and / or: unordered selections of distinct children
        for node_type in (Or, And):
            candidates = [t for s in range(1, size)
                          for t in by_size[s] if not isinstance(t, node_type)]
            candidates.sort(key=unparse)

            def pick(start: int, remaining: int, chosen: list[TaskAst]):
                if remaining == 0:
                    if len(chosen) >= 2:
                        found.append(node_type(tuple(chosen)))
                    return
                for idx in range(start, len(candidates)):
                    cand = candidates[idx]
                    need = leaf_count(cand)
                    if need <= remaining:
                        pick(idx + 1, remaining - need, chosen + [cand])

            pick(0, size, [])
        by_size[size] = found

    out: set[TaskAst] = set()
    for size in range(1, max_atoms + 1):
        out.update(by_size[size])
    return out
