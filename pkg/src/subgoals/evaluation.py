"""Planning evaluation over task lists with deterministic seeding."""

from __future__ import annotations

import dataclasses
import hashlib
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .classifiers import OracleProvider, SubgoalClassifiers, LearnedProvider
from .crafting import CraftingEnv, config_from_json, config_to_json
from .demos import Demonstration
from .fsm import compile_task
from .planner import PlannerConfig, is_primitive, plan
from .presets import required_start_items, sample_initial_state
from .tasklang import parse_task, satisfies, unparse


def stable_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class TaskEvalRow:
    task: str
    runs: int
    successes: int
    mean_cost: float
    mean_expanded: float
    wall_time: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.runs if self.runs else 0.0


@dataclass
class EvalReport:
    rows: list[TaskEvalRow]
    seeds: int

    @property
    def overall_success_rate(self) -> float:
        runs = sum(r.runs for r in self.rows)
        return sum(r.successes for r in self.rows) / runs if runs else 0.0

    def to_json(self) -> dict:
        return {
            "seeds": self.seeds,
            "overall_success_rate": self.overall_success_rate,
            "tasks": [{
                "task": r.task,
                "runs": r.runs,
                "successes": r.successes,
                "success_rate": r.success_rate,
                "mean_cost": r.mean_cost,
                "mean_expanded": r.mean_expanded,
                "wall_time": r.wall_time,
            } for r in self.rows],
        }

    def to_csv(self) -> str:
        lines = ["task,runs,successes,success_rate,mean_cost,mean_expanded,wall_time"]
        for r in self.rows:
            lines.append(f"\"{r.task}\",{r.runs},{r.successes},"
                         f"{r.success_rate:.4f},{r.mean_cost:.4f},"
                         f"{r.mean_expanded:.1f},{r.wall_time:.3f}")
        return "\n".join(lines) + "\n"


def plan_once(env: CraftingEnv, provider, task_text: str, seed: int,
              search: PlannerConfig, shuffle: bool = True):
    """Plan one task from a seeded initial state; success requires the
    resulting grid-state sequence to satisfy the task under the
    ground-truth predicates."""
    task = parse_task(task_text)
    rng = random.Random(stable_seed(seed, task_text))
    s0 = sample_initial_state(env, rng,
                              inventory=required_start_items(env, task),
                              shuffle=shuffle)
    machine = compile_task(task)
    result = plan(env, machine, provider, search, s0, rng=rng)
    ok = False
    if result.success:
        grid_states = [aug[0] for aug in result.plan.states]
        ok = satisfies(grid_states, task, env.oracle_tests())
    return result, ok


def _evaluate_task(env, provider, task_text, seeds, search) -> TaskEvalRow:
    started = time.perf_counter()
    successes = 0
    costs = []
    expanded = []
    for seed in range(seeds):
        result, ok = plan_once(env, provider, task_text, seed, search)
        expanded.append(result.expanded)
        if ok:
            successes += 1
            costs.append(result.plan.cost)
    return TaskEvalRow(
        task=task_text,
        runs=seeds,
        successes=successes,
        mean_cost=sum(costs) / len(costs) if costs else float("nan"),
        mean_expanded=sum(expanded) / len(expanded) if expanded else 0.0,
        wall_time=time.perf_counter() - started,
    )


def _worker(args) -> dict:
    world_json, model_bytes, task_text, seeds, search_args = args
    env = CraftingEnv(config_from_json(world_json))
    if model_bytes is None:
        provider = OracleProvider(env)
    else:
        provider = LearnedProvider(SubgoalClassifiers.from_bytes(model_bytes), env)
    row = _evaluate_task(env, provider, task_text, seeds,
                         PlannerConfig(**search_args))
    return dataclasses.asdict(row)


def evaluate_tasks(env: CraftingEnv, provider, tasks, seeds: int,
                   search: PlannerConfig, workers: int = 1) -> EvalReport:
    """Success rate, plan cost, and expansion counts per task.

    With ``workers > 1`` the tasks fan out over a process pool; results
    are reduced in task order either way, so reports are deterministic.
    """
    task_texts = [t if isinstance(t, str) else unparse(t) for t in tasks]
    if workers > 1:
        model_bytes = (None if isinstance(provider, OracleProvider)
                       else provider.classifiers.to_bytes())
        payload = [(config_to_json(env.config), model_bytes, text, seeds,
                    dataclasses.asdict(search)) for text in task_texts]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [TaskEvalRow(**data) for data in pool.map(_worker, payload)]
    else:
        rows = [_evaluate_task(env, provider, text, seeds, search)
                for text in task_texts]
    return EvalReport(rows=rows, seeds=seeds)


def heldout_demos(env: CraftingEnv, tasks, per_task: int, seed_base: int,
                  noise: float = 0.05) -> list[Demonstration]:
    """Fresh demonstrations for recognition-style evaluation."""
    from .demos import generate_demo
    out = []
    for task_text in tasks:
        task = parse_task(task_text) if isinstance(task_text, str) else task_text
        for k in range(per_task):
            out.append(generate_demo(env, task,
                                     seed=stable_seed(seed_base, unparse(task), k),
                                     noise=noise))
    return out
