"""Command line for dataset generation, training, planning, and evaluation.

Exit codes: 0 on success, 2 when a planner gives up within budget, 3 on
bad input.  Every command takes ``--seed`` and is deterministic given it;
the environment variables ``SUBGOALS_SEED`` and ``SUBGOALS_BUDGET``
override the seed and the node budget.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import random
import sys

import numpy as np

from .classifiers import (LearnedProvider, ModelFormatError, OracleProvider,
                          SubgoalClassifiers)
from .crafting import CraftingEnv, load_world
from .demos import (DatasetFormatError, DemoGenerationError, generate_demo,
                    load_dataset, save_dataset)
from .dependency import (DependencyMatrix, GoalSearchConfig, discover,
                         matrix_table, plan_to_goal, uniform_matrix)
from .evaluation import evaluate_tasks
from .fsm import compile_task
from .learning import TrainConfig, train
from .planner import PlannerConfig, is_primitive, plan
from .presets import required_start_items, sample_initial_state
from .tasklang import TaskSyntaxError, parse_task, unparse

EXIT_OK = 0
EXIT_PLANNER = 2
EXIT_INPUT = 3

DEPS_FORMAT = "subgoals-deps"
DEPS_VERSION = 1


class InputError(Exception):
    pass


def _read_tasks(path) -> list[str]:
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = [line.strip() for line in fh]
    except OSError as exc:
        raise InputError(f"cannot read task list: {exc}") from exc
    tasks = [line for line in lines if line and not line.startswith("#")]
    if not tasks:
        raise InputError(f"no tasks found in {path}")
    for text in tasks:
        try:
            parse_task(text)
        except TaskSyntaxError as exc:
            raise InputError(f"bad task {text!r}: {exc}") from exc
    return tasks


def _load_env(path) -> CraftingEnv:
    try:
        return CraftingEnv(load_world(path))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load world {path}: {exc}") from exc


def _load_model(path, env) -> SubgoalClassifiers:
    try:
        return SubgoalClassifiers.load(path, env)
    except (OSError, ModelFormatError) as exc:
        raise InputError(f"cannot load model {path}: {exc}") from exc


def _provider(args, env):
    if getattr(args, "oracle", False):
        return OracleProvider(env)
    if not getattr(args, "model", None):
        raise InputError("a model file is required unless --oracle is given")
    return LearnedProvider(_load_model(args.model, env), env)


def _seed(args) -> int:
    env_seed = os.environ.get("SUBGOALS_SEED")
    if env_seed is not None:
        return int(env_seed)
    return args.seed


def _budget(args, default):
    env_budget = os.environ.get("SUBGOALS_BUDGET")
    if env_budget is not None:
        return int(env_budget)
    value = getattr(args, "budget", None)
    return default if value is None else value


def _search_config(args, seed, node_budget=5000, total=None) -> PlannerConfig:
    return PlannerConfig(node_budget=node_budget, total_budget=total, seed=seed)


def save_matrix(path, matrix: DependencyMatrix) -> None:
    payload = {"format": DEPS_FORMAT, "version": DEPS_VERSION,
               "subgoals": list(matrix.subgoals),
               "d": matrix.d.tolist(), "bcount": matrix.bcount.tolist()}
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_matrix(path) -> DependencyMatrix:
    try:
        with open(path, "r", encoding="ascii") as fh:
            payload = json.load(fh)
        if payload.get("format") != DEPS_FORMAT:
            raise InputError(f"{path} is not a dependency file")
        return DependencyMatrix(tuple(payload["subgoals"]),
                                np.array(payload["d"]),
                                np.array(payload["bcount"]))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load dependencies {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_demos(args) -> int:
    env = _load_env(args.world)
    tasks = _read_tasks(args.tasks)
    seed = _seed(args)
    demos = []
    failures = []
    for task_text in tasks:
        task = parse_task(task_text)
        made = 0
        for k in range(args.count):
            try:
                demos.append(generate_demo(
                    env, task, seed=seed * 1_000_003 + hash_free(task_text, k),
                    noise=args.noise))
                made += 1
            except DemoGenerationError as exc:
                print(f"warning: {exc}", file=sys.stderr)
        if made == 0:
            failures.append(task_text)
    save_dataset(args.out, env.config, demos)
    print(f"wrote {len(demos)} demonstrations for {len(tasks)} tasks "
          f"to {args.out}")
    if failures:
        print(f"error: no demonstrations for: {', '.join(failures)}",
              file=sys.stderr)
        return EXIT_PLANNER
    return EXIT_OK


def hash_free(text: str, k: int) -> int:
    # process-independent stand-in for hash((text, k))
    import hashlib
    digest = hashlib.sha256(f"{text}|{k}".encode()).digest()
    return int.from_bytes(digest[:6], "big")


def cmd_train(args) -> int:
    try:
        config_data = {}
        if args.config:
            with open(args.config, "r", encoding="ascii") as fh:
                config_data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config: {exc}") from exc
    try:
        world_config, demos = load_dataset(args.data)
    except (OSError, DatasetFormatError) as exc:
        raise InputError(f"cannot load dataset: {exc}") from exc
    env = CraftingEnv(world_config)
    search_data = config_data.pop("search", {})
    config = TrainConfig(seed=_seed(args),
                         search=PlannerConfig(**search_data),
                         **config_data)

    log_fh = open(args.log, "w", encoding="ascii") if args.log else None

    def progress(record):
        line = json.dumps(record, sort_keys=True)
        if log_fh:
            log_fh.write(line + "\n")
            log_fh.flush()
        print(line)

    try:
        classifiers, logs = train(demos, env, config, progress=progress)
    finally:
        if log_fh:
            log_fh.close()
    if any(math.isnan(rec["mean_score"]) for rec in logs):
        print("error: training diverged (nan score)", file=sys.stderr)
        return 1
    classifiers.save(args.out)
    print(f"wrote model to {args.out}")
    return EXIT_OK


def _print_trace(env, machine, plan_obj, expanded):
    aug_states = plan_obj.states
    cumulative = 0.0
    print(f"{'step':>4}  {'action':<40} {'cost':>8}  state")
    for i, action in enumerate(plan_obj.actions):
        state, _node = aug_states[i]
        if is_primitive(action):
            cumulative += 0.1
            label = action
        else:
            label = (f"advance {machine.labels[action[0]] or 'start'} -> "
                     f"{machine.labels[action[1]] or 'done'}")
        inv = ",".join(state.inventory) or "-"
        print(f"{i:>4}  {label:<40} {cumulative:>8.2f}  "
              f"agent={state.agent} inv={inv}")
    print(f"total cost {plan_obj.cost:.4f}, expanded {expanded} nodes")
    path = [aug[0].agent for aug in aug_states]
    print(env.render(aug_states[-1][0], path=path))


def cmd_plan(args) -> int:
    env = _load_env(args.world)
    provider = _provider(args, env)
    try:
        task = parse_task(args.task)
    except TaskSyntaxError as exc:
        raise InputError(str(exc)) from exc
    seed = _seed(args)
    machine = compile_task(task)
    rng = random.Random(stable_cli_seed(seed, args.task))
    s0 = sample_initial_state(env, rng,
                              inventory=required_start_items(env, task),
                              shuffle=not args.fixed_layout)
    search = PlannerConfig(node_budget=_budget(args, 5000), seed=seed)
    result = plan(env, machine, provider, search, s0, rng=rng)
    metrics = {"expanded_nodes": result.expanded, "success": result.success,
               "cost": result.plan.cost if result.success else None}
    if not result.success:
        print(json.dumps(metrics, sort_keys=True))
        print(f"planning failed: {result.failure_reason}", file=sys.stderr)
        return EXIT_PLANNER
    _print_trace(env, machine, result.plan, result.expanded)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def stable_cli_seed(seed: int, text: str) -> int:
    return seed * 11_400_714 + hash_free(text, 0) % 1_000_003


def cmd_plan_goal(args) -> int:
    env = _load_env(args.world)
    if args.oracle and args.deps is None and args.model is not None:
        # with --oracle the single path positional is the dependency file
        args.deps, args.model = args.model, None
    provider = _provider(args, env)
    if args.uniform_deps:
        matrix = uniform_matrix(provider.subgoals)
    else:
        if not args.deps:
            raise InputError("a dependency file is required unless "
                             "--uniform-deps is given")
        matrix = load_matrix(args.deps)
    if args.goal not in provider.index:
        raise InputError(f"unknown goal subgoal {args.goal!r}")
    seed = _seed(args)
    rng = random.Random(stable_cli_seed(seed, args.goal))
    s0 = sample_initial_state(env, rng)
    config = GoalSearchConfig(total_budget=_budget(args, 25000),
                              attempt_budget=args.attempt_budget,
                              search=PlannerConfig(seed=seed), seed=seed)
    result = plan_to_goal(args.goal, env, provider, matrix, s0, config,
                          blind=args.blind)
    print(json.dumps({
        "goal": args.goal,
        "success": result.success,
        "expanded_nodes": result.expanded,
        "instruction": (" then ".join(result.instruction)
                        if result.instruction else None),
        "attempts": [{"instruction": " then ".join(a.instruction),
                      "expanded": a.expanded, "success": a.success}
                     for a in result.attempts],
    }, indent=2, sort_keys=True))
    if not result.success:
        return EXIT_PLANNER
    machine = compile_task(parse_task(" then ".join(result.instruction)))
    _print_trace(env, machine, result.plan, result.expanded)
    return EXIT_OK


def cmd_eval(args) -> int:
    env = _load_env(args.world)
    provider = _provider(args, env)
    tasks = _read_tasks(args.tasks)
    search = PlannerConfig(node_budget=_budget(args, 5000), seed=_seed(args))
    report = evaluate_tasks(env, provider, tasks, seeds=args.seeds,
                            search=search, workers=args.workers)
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
    if args.csv:
        with open(args.csv, "w", encoding="ascii") as fh:
            fh.write(report.to_csv())
    return EXIT_OK


def cmd_deps(args) -> int:
    try:
        world_config, demos = load_dataset(args.data)
    except (OSError, DatasetFormatError) as exc:
        raise InputError(f"cannot load dataset: {exc}") from exc
    env = CraftingEnv(world_config)
    provider = LearnedProvider(_load_model(args.model, env), env)
    matrix = discover(demos, provider)
    save_matrix(args.out, matrix)
    print(matrix_table(matrix))
    for name in matrix.subgoals:
        top = matrix.top_predecessors(name, 3)
        if top:
            listing = ", ".join(f"{n} ({v:.2f})" for n, v in top)
            print(f"{name}: {listing}")
    print(f"wrote dependency matrix to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subgoals",
        description="Learn subgoal classifiers from demonstrations and plan "
                    "with machine-compiled task descriptions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="generate a demonstration dataset")
    p.add_argument("world")
    p.add_argument("tasks")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("train", help="train classifiers on a dataset")
    p.add_argument("data")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", help="plan one task and print the trace")
    p.add_argument("world")
    p.add_argument("model", nargs="?")
    p.add_argument("--task", required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true",
                   help="use ground-truth predicates instead of a model")
    p.add_argument("--fixed-layout", action="store_true")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("plan-goal", help="search for a single goal subgoal")
    p.add_argument("world")
    p.add_argument("model", nargs="?")
    p.add_argument("deps", nargs="?")
    p.add_argument("--goal", required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--attempt-budget", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--uniform-deps", action="store_true")
    p.add_argument("--blind", action="store_true",
                   help="plan directly for the goal with no instructions")
    p.set_defaults(func=cmd_plan_goal)

    p = sub.add_parser("eval", help="evaluate planning over a task list")
    p.add_argument("world")
    p.add_argument("model", nargs="?")
    p.add_argument("tasks")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--out")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("deps", help="discover subgoal dependencies")
    p.add_argument("data")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_deps)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            return EXIT_INPUT
        return 0
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
