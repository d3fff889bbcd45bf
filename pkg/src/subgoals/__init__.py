"""Learning plannable subgoals from demonstrations and task descriptions.

The package splits into:

- :mod:`subgoals.tasklang` -- the task description language (parse, print,
  satisfaction, enumeration);
- :mod:`subgoals.fsm` -- compiling task ASTs to acyclic machines;
- :mod:`subgoals.crafting` -- the deterministic grid crafting environment;
- :mod:`subgoals.classifiers` -- per-subgoal logistic goal/unmet heads;
- :mod:`subgoals.planner` -- machine-augmented search and tree values;
- :mod:`subgoals.learning` -- alignment scoring and gradient training;
- :mod:`subgoals.dependency` -- precedence discovery and goal-only search;
- :mod:`subgoals.evaluation` / :mod:`subgoals.cli` -- the harness.
"""

from .classifiers import (LearnedProvider, ModelFormatError, OracleProvider,
                          SubgoalClassifiers)
from .crafting import (ACTIONS, CraftingEnv, CraftingRule, GridState,
                       ResourceRule, WorldConfig, load_world, save_world)
from .demos import (Demonstration, DemoGenerationError, generate_demo,
                    load_dataset, save_dataset, validate_demo)
from .dependency import (ClassifierThresholds, DependencyMatrix,
                         GoalSearchConfig, compute_thresholds, discover,
                         first_index, plan_to_goal, priority, uniform_matrix)
from .evaluation import EvalReport, evaluate_tasks, plan_once, stable_seed
from .fsm import Fsm, compile_task, edge_list_text, topological_order
from .learning import (Alignment, FrozenLoss, FrozenScore, TrainConfig,
                       build_frozen_loss, demo_roots, loss, rationality,
                       score, segment, train)
from .planner import (Plan, PlannerConfig, PlanResult, SearchTree,
                      augmented_cost, augmented_transition, build_search_tree,
                      is_primitive, plan, replay_plan, transition_cost,
                      value_iteration_on_tree)
from .presets import (GOAL_TASKS, HELDOUT_TASKS, TRAINING_TASKS,
                      default_world, required_start_items, river_world,
                      sample_initial_state)
from .tasklang import (And, Atom, Or, TaskAst, TaskSyntaxError, Then,
                       UnknownKeywordError, atoms, enumerate_tasks,
                       parse_task, satisfies, unparse)

__version__ = "0.1.0"
