"""Per-subgoal logistic classifiers.

Each subgoal ``o`` carries two independently parameterized linear-logistic
heads over the binary feature vector: ``goal`` scores whether the subgoal
is achieved, and ``unmet`` scores whether it is still pending.  ``unmet``
stands in wherever the math would use one minus the goal output; keeping
it separate widens the set of usable solutions and stabilizes training.
"""

from __future__ import annotations

import json
import math
from typing import Iterable

import numpy as np

from .crafting import CraftingEnv, GridState

MODEL_FORMAT = "subgoals-model"
MODEL_VERSION = 1

GOAL = 0
UNMET = 1


class ModelFormatError(ValueError):
    pass


def _log_sigmoid(z: np.ndarray | float):
    # log(1/(1+e^-z)) computed without overflow
    return -np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


class SubgoalClassifiers:
    """Learnable parameters for all registered subgoals.

    Parameters live in one flat vector laid out per subgoal as
    ``[goal weights, goal bias, unmet weights, unmet bias]``; gradient
    vectors returned by the learner use the same layout.
    """

    def __init__(self, subgoals: Iterable[str], feature_schema: Iterable[str],
                 params: np.ndarray | None = None):
        self.subgoals = tuple(subgoals)
        self.feature_schema = tuple(feature_schema)
        self.index = {name: i for i, name in enumerate(self.subgoals)}
        f = len(self.feature_schema)
        self.block = f + 1
        size = len(self.subgoals) * 2 * self.block
        if params is None:
            params = np.zeros(size, dtype=np.float64)
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (size,):
                raise ValueError(f"expected {size} parameters, got {params.shape}")
            if not np.all(np.isfinite(params)):
                raise ValueError("parameters must be finite")
        self.params = params

    @classmethod
    def for_env(cls, env: CraftingEnv) -> "SubgoalClassifiers":
        return cls(env.subgoal_names(), env.feature_schema)

    # -- views ---------------------------------------------------------------

    def _table(self) -> np.ndarray:
        return self.params.reshape(len(self.subgoals), 2, self.block)

    def weights(self, name: str, which: int) -> np.ndarray:
        return self._table()[self.index[name], which, :-1]

    def bias(self, name: str, which: int) -> float:
        return float(self._table()[self.index[name], which, -1])

    def param_slice(self, name: str, which: int) -> slice:
        start = (self.index[name] * 2 + which) * self.block
        return slice(start, start + self.block)

    def copy(self) -> "SubgoalClassifiers":
        return SubgoalClassifiers(self.subgoals, self.feature_schema,
                                  self.params.copy())

    # -- evaluation ------------------------------------------------------------

    def _logit(self, name: str, which: int, phi: np.ndarray) -> float:
        row = self._table()[self.index[name], which]
        return float(row[:-1] @ phi + row[-1])

    def goal_prob(self, name: str, phi: np.ndarray) -> float:
        """Probability the subgoal is achieved; strictly inside (0, 1)."""
        return float(np.exp(_log_sigmoid(self._logit(name, GOAL, phi))))

    def unmet_prob(self, name: str, phi: np.ndarray) -> float:
        """Probability the subgoal is still pending; strictly inside (0, 1)."""
        return float(np.exp(_log_sigmoid(self._logit(name, UNMET, phi))))

    def log_eval(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(log goal prob, log unmet prob), one entry per subgoal."""
        table = self._table()
        z = table[:, :, :-1] @ phi + table[:, :, -1]
        logs = _log_sigmoid(z)
        return logs[:, GOAL], logs[:, UNMET]

    def grad_log(self, name: str, phi: np.ndarray, which: int) -> np.ndarray:
        """Exact gradient of the log output w.r.t. this head's (weights, bias).

        For a logistic head, d log sigma(z) / dz = 1 - sigma(z).
        """
        z = self._logit(name, which, phi)
        factor = float(np.exp(_log_sigmoid(-z)))  # 1 - sigma(z)
        grad = np.empty(self.block)
        grad[:-1] = factor * phi
        grad[-1] = factor
        return grad

    def schema_hash(self) -> str:
        import hashlib
        return hashlib.sha256("\n".join(self.feature_schema).encode()).hexdigest()

    # -- persistence -----------------------------------------------------------

    def to_bytes(self) -> bytes:
        table = self._table()
        payload = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "schema": list(self.feature_schema),
            "schema_hash": self.schema_hash(),
            "subgoals": list(self.subgoals),
            "weights": {
                name: {
                    "goal_w": table[i, GOAL, :-1].tolist(),
                    "goal_b": table[i, GOAL, -1],
                    "unmet_w": table[i, UNMET, :-1].tolist(),
                    "unmet_b": table[i, UNMET, -1],
                } for i, name in enumerate(self.subgoals)
            },
        }
        return json.dumps(payload, sort_keys=True).encode("ascii")

    @classmethod
    def from_bytes(cls, data: bytes) -> "SubgoalClassifiers":
        try:
            payload = json.loads(data.decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ModelFormatError(f"corrupt model file: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("format") != MODEL_FORMAT:
            raise ModelFormatError("not a classifier model file")
        if payload.get("version") != MODEL_VERSION:
            raise ModelFormatError(
                f"unsupported model version {payload.get('version')!r}")
        schema = tuple(payload["schema"])
        subgoals = tuple(payload["subgoals"])
        model = cls(subgoals, schema)
        table = model._table()
        try:
            for i, name in enumerate(subgoals):
                entry = payload["weights"][name]
                table[i, GOAL, :-1] = entry["goal_w"]
                table[i, GOAL, -1] = entry["goal_b"]
                table[i, UNMET, :-1] = entry["unmet_w"]
                table[i, UNMET, -1] = entry["unmet_b"]
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"corrupt model file: {exc}") from exc
        return model

    def save(self, path, env: CraftingEnv | None = None) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, env: CraftingEnv | None = None) -> "SubgoalClassifiers":
        with open(path, "rb") as fh:
            model = cls.from_bytes(fh.read())
        if env is not None and model.feature_schema != env.feature_schema:
            raise ModelFormatError("model feature schema does not match world")
        return model


class LearnedProvider:
    """Adapts classifiers to the planner: per-state log goal/unmet vectors."""

    def __init__(self, classifiers: SubgoalClassifiers, env: CraftingEnv):
        if classifiers.feature_schema != env.feature_schema:
            raise ModelFormatError("classifier schema does not match world")
        self.classifiers = classifiers
        self.env = env
        self.subgoals = classifiers.subgoals
        self.index = classifiers.index

    def log_state(self, state: GridState) -> tuple[np.ndarray, np.ndarray]:
        return self.classifiers.log_eval(self.env.features(state))


class OracleProvider:
    """Ground-truth predicates as hard 0/1 classifiers.

    Log outputs are 0 or -inf, so an inappropriate machine transition has
    infinite cost and is simply inapplicable.
    """

    def __init__(self, env: CraftingEnv):
        self.env = env
        self.subgoals = env.subgoal_names()
        self.index = {name: i for i, name in enumerate(self.subgoals)}
        self._tests = [env.oracle_goal(name) for name in self.subgoals]

    def log_state(self, state: GridState) -> tuple[np.ndarray, np.ndarray]:
        achieved = np.array([test(state) for test in self._tests], dtype=bool)
        log_goal = np.where(achieved, 0.0, -math.inf)
        log_unmet = np.where(achieved, -math.inf, 0.0)
        return log_goal, log_unmet
