"""Per-agent learning state and updates for independent learners.

A learner only ever sees the current state, its own action, its own realised
cost and the next state.  Nothing in this module takes another agent's action,
policy or table as input; the exact-model oracle variant of the update rule
lives here too but is only used by the oracle revision process.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import RangeError
from .game import Game
from .policy import QuantizedPolicySet, nearest_point_index
from .solver import DEFAULT_TOL, ExactOracle, induce_mdp, solve_q_star

OBJECTIVES = ("min", "max")


# --------------------------------------------------------------------------
# step sizes


class StepSize:
    """Step-size rule ``alpha_n = (n + 1) ** -power`` indexed by the visit count ``n``.

    ``power`` in (1/2, 1] keeps ``sum alpha = inf`` and ``sum alpha^2 < inf``.
    """

    def __init__(self, power: float = 1.0):
        if not 0.5 < power <= 1.0:
            raise ValueError(f"power must lie in (0.5, 1], got {power}")
        self.power = float(power)

    def __call__(self, n: int) -> float:
        if n < 0:
            raise ValueError("visit count must be nonnegative")
        return float((n + 1.0) ** -self.power)

    def table(self, size: int) -> np.ndarray:
        return (np.arange(size, dtype=float) + 1.0) ** -self.power

    def __repr__(self):
        return f"StepSize(power={self.power})"

    def __eq__(self, other):
        return isinstance(other, StepSize) and other.power == self.power

    def __hash__(self):
        return hash(("StepSize", self.power))


class TabulatedStepSize:
    """Wraps an arbitrary callable ``n -> alpha_n``; the series conditions are the caller's job."""

    def __init__(self, fn: Callable[[int], float]):
        self.fn = fn

    def __call__(self, n: int) -> float:
        return float(self.fn(n))

    def table(self, size: int) -> np.ndarray:
        return np.array([self.fn(n) for n in range(size)], dtype=float)


harmonic = StepSize(1.0)


def step_size(n: int, schedule=harmonic) -> float:
    return schedule(n)


# --------------------------------------------------------------------------
# tables


@dataclass
class QTable:
    values: np.ndarray  # (state, action)
    counts: np.ndarray = None  # visits within the current phase

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.counts is None:
            self.counts = np.zeros(self.values.shape, dtype=np.int64)

    @classmethod
    def zeros(cls, num_states, num_actions):
        return cls(np.zeros((num_states, num_actions)))


@dataclass
class JTable:
    values: np.ndarray  # (state,)
    counts: np.ndarray = None

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.counts is None:
            self.counts = np.zeros(self.values.shape, dtype=np.int64)

    @classmethod
    def zeros(cls, num_states):
        return cls(np.zeros(num_states))


def q_update(q: QTable, x: int, u: int, cost: float, x_next: int, beta: float, schedule=harmonic):
    """One Q-learning step on entry ``(x, u)``; ``alpha`` is indexed by prior visits this phase."""
    n = q.counts[x, u]
    alpha = schedule(n)
    target = cost + beta * q.values[x_next].min()
    q.values[x, u] = (1.0 - alpha) * q.values[x, u] + alpha * target
    q.counts[x, u] = n + 1
    return q


def j_update(j: JTable, x: int, cost: float, x_next: int, beta: float, schedule=harmonic):
    m = j.counts[x]
    alpha = schedule(m)
    target = cost + beta * j.values[x_next]
    j.values[x] = (1.0 - alpha) * j.values[x] + alpha * target
    j.counts[x] = m + 1
    return j


def satisfaction_test(j, q, eps: float, delta: float) -> bool:
    """``J(x) <= min_a Q(x, a) + eps + delta`` at every state."""
    j = j.values if isinstance(j, JTable) else np.asarray(j, dtype=float)
    q = q.values if isinstance(q, QTable) else np.asarray(q, dtype=float)
    return bool(np.all(j <= q.min(axis=1) + eps + delta))


# --------------------------------------------------------------------------
# policy updates


def greedy_action(row, objective: str = "min", tie_tol: float = 0.0) -> int:
    """Lowest-index action whose Q value is within ``tie_tol`` of the best."""
    row = np.asarray(row, dtype=float)
    if objective == "min":
        return int(np.flatnonzero(row <= row.min() + tie_tol)[0])
    if objective == "max":
        return int(np.flatnonzero(row >= row.max() - tie_tol)[0])
    raise ValueError(f"objective must be one of {OBJECTIVES}")


def update_direction(pi_old, q, eta: float, objective: str = "min", tie_tol: float = 0.0):
    """Unprojected policy after moving up to ``eta`` probability mass onto the greedy action.

    Each non-greedy action gives up ``min(pi_old(u|x), eta / (|U| - 1))``, and the greedy
    action receives the total.  Rows keep summing to one.
    """
    pi_old = np.asarray(pi_old, dtype=float)
    q = q.values if isinstance(q, QTable) else np.asarray(q, dtype=float)
    if eta <= 0:
        raise ValueError("eta must be positive")
    num_actions = pi_old.shape[1]
    if num_actions < 2:
        return pi_old.copy()
    step = np.minimum(pi_old, eta / (num_actions - 1))
    offsets = -step
    for x in range(pi_old.shape[0]):
        g = greedy_action(q[x], objective, tie_tol)
        offsets[x, g] = step[x].sum() - step[x, g]
    return pi_old + offsets


def independent_update_rule(
    pi_old, q, eta: float, grid: QuantizedPolicySet, objective: str = "min", tie_tol: float = 0.0
) -> np.ndarray:
    """Move toward the greedy action of learned Q-factors, then snap back to the grid."""
    mid = update_direction(pi_old, q, eta, objective, tie_tol)
    return grid.points[[nearest_point_index(row, grid) for row in mid]]


def independent_update_rule_id(pi_id: int, q, eta, grid, objective="min", tie_tol=0.0) -> int:
    mid = update_direction(grid.policy(pi_id), q, eta, objective, tie_tol)
    return grid.ids_from_point_indices(nearest_point_index(row, grid) for row in mid)


def oracle_q(game: Game, i: int, joint, tol: float = DEFAULT_TOL, oracle: Optional[ExactOracle] = None):
    if oracle is not None:
        return oracle.q_star(i, joint)
    return solve_q_star(induce_mdp(game, i, joint), tol)


def oracle_update_rule(
    joint, i: int, game: Game, eta: float, grid: QuantizedPolicySet, tol: float = DEFAULT_TOL,
    objective: str = "min", oracle: Optional[ExactOracle] = None,
) -> np.ndarray:
    """The update rule driven by exact Q-factors against ``joint[-i]``.

    Greedy ties are resolved within ``2 * tol``, the accuracy of the computed Q*.
    """
    q = oracle_q(game, i, joint, tol, oracle)
    return independent_update_rule(joint[i], q, eta, grid, objective, tie_tol=2 * tol)


def policy_revision(
    rng: np.random.Generator, pi_id: int, satisfied: bool, q, grid: QuantizedPolicySet,
    e: float, eta: float, objective: str = "min", tie_tol: float = 0.0,
) -> int:
    """Satisficing revision: keep when satisfied; otherwise w.p. ``e`` draw uniformly from
    the grid, else apply the update rule with ``q``.  No randomness is consumed when satisfied."""
    if satisfied:
        return pi_id
    if rng.random() < e:
        return grid.random_id(rng)
    return independent_update_rule_id(pi_id, q, eta, grid, objective, tie_tol)


# --------------------------------------------------------------------------
# learner state


@dataclass
class LearnerParams:
    rho: float = 0.05
    e: float = 0.1
    eta: float = 0.2
    delta: Optional[float] = None
    eps: float = 0.2
    step_size: object = field(default_factory=lambda: harmonic)
    q_box: Optional[tuple] = None
    j_box: Optional[tuple] = None
    objective: str = "min"

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise RangeError("rho", f"rho must lie in (0, 1), got {self.rho}")
        if not 0.0 <= self.e <= 1.0:
            raise RangeError("e", f"e must lie in [0, 1], got {self.e}")
        if not self.eta > 0:
            raise RangeError("eta", f"eta must be positive, got {self.eta}")
        if self.delta is not None and not self.delta > 0:
            raise RangeError("delta", f"delta must be positive, got {self.delta}")
        if not self.eps >= 0:
            raise RangeError("eps", f"eps must be nonnegative, got {self.eps}")
        if self.objective not in OBJECTIVES:
            raise RangeError("objective", f"objective must be one of {OBJECTIVES}")


def default_box(game: Game, i: int) -> tuple[float, float]:
    bound = float(game.value_bound[i]) + 1.0
    return (-bound, bound)


@dataclass
class LearnerState:
    player: int
    params: LearnerParams
    grid: QuantizedPolicySet
    policy_id: int
    q: QTable
    j: JTable
    beta: float
    q_box: tuple
    j_box: tuple
    rng: np.random.Generator

    @classmethod
    def create(cls, game: Game, player: int, params: LearnerParams, grid: QuantizedPolicySet,
               policy_id: int, rng: np.random.Generator):
        if params.delta is None:
            raise ValueError("delta must be set before creating a learner")
        ns, na = game.num_states, game.num_actions[player]
        if (grid.num_states, grid.num_actions) != (ns, na):
            raise ValueError("grid does not match the player's state/action sets")
        return cls(
            player=player,
            params=params,
            grid=grid,
            policy_id=int(policy_id),
            q=QTable.zeros(ns, na),
            j=JTable.zeros(ns),
            beta=float(game.discount[player]),
            q_box=params.q_box or default_box(game, player),
            j_box=params.j_box or default_box(game, player),
            rng=rng,
        )

    @property
    def policy(self) -> np.ndarray:
        return self.grid.policy(self.policy_id)

    def observe(self, x: int, u: int, cost: float, x_next: int) -> None:
        q_update(self.q, x, u, cost, x_next, self.beta, self.params.step_size)
        j_update(self.j, x, cost, x_next, self.beta, self.params.step_size)

    def is_satisfied(self) -> bool:
        return satisfaction_test(self.j, self.q, self.params.eps, self.params.delta)

    def revise(self, satisfied: bool) -> int:
        p = self.params
        return policy_revision(
            self.rng, self.policy_id, satisfied, self.q, self.grid, p.e, p.eta, p.objective
        )


def reset_estimates(state: LearnerState) -> LearnerState:
    """Project Q and J onto their boxes and zero the within-phase visit counts."""
    np.clip(state.q.values, *state.q_box, out=state.q.values)
    np.clip(state.j.values, *state.j_box, out=state.j.values)
    state.q.counts[:] = 0
    state.j.counts[:] = 0
    return state
