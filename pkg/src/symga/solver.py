"""Exact (model-based) solvers used as ground truth.

Everything here reads the full game model.  Learners never call into this
module; the orchestrator only uses it for offline equilibrium flags and the
oracle revision process.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AllGapsZero, CombinatorialBlowup, IndeterminateMargin, ShapeMismatch
from .game import Game
from .policy import QuantizedPolicySet, perturb_joint

DEFAULT_TOL = 1e-10
DIRECT_SOLVE_MAX_STATES = 1000
_LETTERS = "abcdefghijklmnopqrstuvw"


@dataclass(frozen=True, eq=False)
class InducedMDP:
    """The MDP a single player faces when everyone else is frozen."""

    kernel: np.ndarray  # (state, action, next_state)
    cost: np.ndarray  # (state, action)
    discount: float

    @property
    def num_states(self) -> int:
        return self.cost.shape[0]

    @property
    def num_actions(self) -> int:
        return self.cost.shape[1]


def _check_joint(game: Game, joint) -> None:
    if len(joint) != game.num_players:
        raise ShapeMismatch(f"joint policy has {len(joint)} entries for {game.num_players} players")
    for j, p in enumerate(joint):
        if p is None:
            continue
        if np.shape(p) != (game.num_states, game.num_actions[j]):
            raise ShapeMismatch(f"policy of player {j} has shape {np.shape(p)}")


def _contract_others(tensor: np.ndarray, i: int, joint, n: int, trailing: str = "") -> np.ndarray:
    # tensor axes: state, a_0..a_{n-1}, then `trailing`
    acts = _LETTERS[:n]
    operands = [tensor]
    subs = ["x" + acts + trailing]
    for j in range(n):
        if j != i:
            operands.append(np.asarray(joint[j], dtype=float))
            subs.append("x" + acts[j])
    expr = ",".join(subs) + "->x" + acts[i] + trailing
    return np.einsum(expr, *operands, optimize="greedy" if n > 2 else False)


def induce_mdp(game: Game, i: int, joint) -> InducedMDP:
    """MDP of player ``i`` against the stationary policies ``joint[j]``, ``j != i``.

    ``joint[i]`` is ignored (it may be ``None``).
    """
    _check_joint(game, joint)
    n = game.num_players
    cost = _contract_others(game.cost_tensor(i), i, joint, n)
    kernel = _contract_others(game.kernel_tensor(), i, joint, n, trailing="y")
    return InducedMDP(kernel=kernel, cost=cost, discount=float(game.discount[i]))


def bellman_operator(mdp: InducedMDP, q: np.ndarray) -> np.ndarray:
    return mdp.cost + mdp.discount * (mdp.kernel @ q.min(axis=1))


def solve_q_star(mdp: InducedMDP, tol: float = DEFAULT_TOL, max_iter: int = 10**7) -> np.ndarray:
    """Optimal Q-factors by value iteration from zero, accurate to ``tol`` in sup-norm."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    beta = mdp.discount
    if beta == 0.0:
        return np.array(mdp.cost, dtype=float)
    # ||Q_{k+1} - Q*|| <= beta/(1-beta) ||Q_{k+1} - Q_k||
    threshold = tol * (1.0 - beta) / (2.0 * beta)
    q = np.zeros_like(mdp.cost, dtype=float)
    for _ in range(max_iter):
        q_next = bellman_operator(mdp, q)
        change = np.max(np.abs(q_next - q))
        q = q_next
        if change <= threshold:
            break
    return q


def bellman_residual(mdp: InducedMDP, q: np.ndarray) -> float:
    return float(np.max(np.abs(bellman_operator(mdp, q) - q)))


def joint_action_distribution(joint) -> np.ndarray:
    """Per-state probabilities of every flattened joint action, shape (state, joint)."""
    prob = np.asarray(joint[0], dtype=float)
    for p in joint[1:]:
        p = np.asarray(p, dtype=float)
        prob = (prob[:, :, None] * p[:, None, :]).reshape(prob.shape[0], -1)
    return prob


def _solve_linear_value(cost: np.ndarray, kernel: np.ndarray, beta: float, tol: float, method: str):
    ns = cost.shape[0]
    if method == "auto":
        method = "direct" if ns <= DIRECT_SOLVE_MAX_STATES else "iterative"
    if method == "direct":
        return np.linalg.solve(np.eye(ns) - beta * kernel, cost)
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")
    if beta == 0.0:
        return np.array(cost, dtype=float)
    threshold = tol * (1.0 - beta) / (2.0 * beta)
    v = np.zeros(ns)
    while True:
        v_next = cost + beta * (kernel @ v)
        change = np.max(np.abs(v_next - v))
        v = v_next
        if change <= threshold:
            return v


def evaluate_policy(game: Game, joint, i: int, tol: float = DEFAULT_TOL, method: str = "auto"):
    """Discounted cost-to-go of player ``i`` from every state under ``joint``."""
    _check_joint(game, joint)
    prob = joint_action_distribution(joint)
    cost = np.einsum("xa,xa->x", prob, game.cost[i])
    kernel = np.einsum("xa,xay->xy", prob, game.kernel)
    return _solve_linear_value(cost, kernel, float(game.discount[i]), tol, method)


def evaluate_in_mdp(mdp: InducedMDP, policy, tol: float = DEFAULT_TOL, method: str = "auto"):
    """Value of a stationary ``policy`` in an induced MDP."""
    policy = np.asarray(policy, dtype=float)
    cost = np.einsum("xu,xu->x", policy, mdp.cost)
    kernel = np.einsum("xu,xuy->xy", policy, mdp.kernel)
    return _solve_linear_value(cost, kernel, mdp.discount, tol, method)


def best_response_gaps(game: Game, i: int, joint, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Per-state suboptimality ``J^i_x(joint) - min_u Q*^i(x, u)``."""
    q = solve_q_star(induce_mdp(game, i, joint), tol)
    return evaluate_policy(game, joint, i, tol) - q.min(axis=1)


def roundoff_floor(game: Game) -> float:
    """Margins below this are floating-point noise on exactly equal quantities."""
    return 64.0 * np.finfo(float).eps * max(1.0, float(np.max(game.value_bound)))


def _decide(gaps: np.ndarray, eps: float, slack: float, certify: bool, player: int = -1,
            floor: float = 0.0) -> bool:
    """Apply the test ``gap <= eps`` with numerical slack.

    Gaps within ``slack`` of ``eps`` are read as exact equality (satisfied).  With
    ``certify`` only round-off-sized margins (below ``floor``) are read that way;
    margins between ``floor`` and ``slack`` raise IndeterminateMargin.
    """
    excess = gaps - eps
    if np.any(excess > slack):
        return False
    if certify:
        close = np.flatnonzero((np.abs(excess) <= slack) & (np.abs(excess) > floor))
        if close.size:
            x = int(close[0])
            raise IndeterminateMargin(player, x, float(excess[x]), slack)
    return True


def is_eps_best_response(
    game: Game, i: int, joint, eps: float, tol: float = DEFAULT_TOL, certify: bool = False
) -> bool:
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return _decide(best_response_gaps(game, i, joint, tol), eps, 2 * tol, certify, i,
                   roundoff_floor(game))


def is_eps_equilibrium(
    game: Game, joint, eps: float, tol: float = DEFAULT_TOL, certify: bool = False
) -> bool:
    return all(
        is_eps_best_response(game, i, joint, eps, tol, certify) for i in range(game.num_players)
    )


# --------------------------------------------------------------------------
# cached evaluation on the quantized grid


def _key(arrays) -> bytes:
    return b"|".join(np.ascontiguousarray(a, dtype=float).tobytes() for a in arrays)


class ExactOracle:
    """Memoised exact quantities for one game.

    Induced MDPs and Q* are cached per (player, others' policies); values and
    gaps per (player, joint policy).  Safe to share read-only across callers
    in one process.
    """

    def __init__(self, game: Game, tol: float = DEFAULT_TOL):
        self.game = game
        self.tol = tol
        self._mdp: dict = {}
        self._q: dict = {}
        self._gap: dict = {}
        self.floor = roundoff_floor(game)

    def _others_key(self, i, joint):
        return (i, _key(p for j, p in enumerate(joint) if j != i))

    def induced(self, i: int, joint) -> InducedMDP:
        key = self._others_key(i, joint)
        mdp = self._mdp.get(key)
        if mdp is None:
            mdp = self._mdp[key] = induce_mdp(self.game, i, joint)
        return mdp

    def q_star(self, i: int, joint) -> np.ndarray:
        key = self._others_key(i, joint)
        q = self._q.get(key)
        if q is None:
            q = self._q[key] = solve_q_star(self.induced(i, joint), self.tol)
        return q

    def value(self, i: int, joint) -> np.ndarray:
        return evaluate_in_mdp(self.induced(i, joint), joint[i], self.tol)

    def gaps(self, i: int, joint) -> np.ndarray:
        key = (i, _key(joint))
        g = self._gap.get(key)
        if g is None:
            g = self._gap[key] = self.value(i, joint) - self.q_star(i, joint).min(axis=1)
        return g

    def best_responding(self, i: int, joint, eps: float, certify: bool = False) -> bool:
        return _decide(self.gaps(i, joint), eps, 2 * self.tol, certify, i, self.floor)

    def satisfaction(self, joint, eps: float, certify: bool = False) -> tuple[bool, ...]:
        return tuple(
            self.best_responding(i, joint, eps, certify) for i in range(self.game.num_players)
        )

    def is_equilibrium(self, joint, eps: float, certify: bool = False) -> bool:
        return all(self.satisfaction(joint, eps, certify))


def player_grids(game: Game, grid) -> list[QuantizedPolicySet]:
    grids = list(grid) if isinstance(grid, (list, tuple)) else [grid] * game.num_players
    if len(grids) != game.num_players:
        raise ShapeMismatch("need one grid per player")
    for j, g in enumerate(grids):
        if (g.num_states, g.num_actions) != (game.num_states, game.num_actions[j]):
            raise ShapeMismatch(f"grid of player {j} does not match the game")
    return grids


class GridOracle(ExactOracle):
    """:class:`ExactOracle` addressed by tuples of grid policy ids."""

    def __init__(self, game: Game, grid, tol: float = DEFAULT_TOL):
        super().__init__(game, tol)
        self.grids = player_grids(game, grid)
        self._policies = [dict() for _ in self.grids]

    def policy(self, i: int, pid: int) -> np.ndarray:
        cache = self._policies[i]
        p = cache.get(pid)
        if p is None:
            p = cache[pid] = self.grids[i].policy(pid)
        return p

    def joint(self, ids: Sequence[int]) -> tuple[np.ndarray, ...]:
        return tuple(self.policy(i, pid) for i, pid in enumerate(ids))

    def num_joint(self) -> int:
        return int(np.prod([g.num_policies for g in self.grids], dtype=object))

    def all_joint_ids(self):
        size = self.num_joint()
        cap = min(g.cap for g in self.grids)
        if size > cap:
            raise CombinatorialBlowup(size, cap)
        return itertools.product(*(range(g.num_policies) for g in self.grids))

    def gaps_ids(self, ids) -> np.ndarray:
        joint = self.joint(ids)
        return np.array([self.gaps(i, joint) for i in range(self.game.num_players)])

    def satisfaction_ids(self, ids, eps: float, certify: bool = False) -> tuple[bool, ...]:
        return self.satisfaction(self.joint(ids), eps, certify)

    def is_equilibrium_ids(self, ids, eps: float, certify: bool = False) -> bool:
        return self.is_equilibrium(self.joint(ids), eps, certify)


def find_quantized_equilibria(
    game: Game, grid, eps: float, tol: float = DEFAULT_TOL, oracle: Optional[GridOracle] = None
) -> list[tuple[int, ...]]:
    """All ``eps``-equilibria of the joint grid, as tuples of policy ids in enumeration order."""
    oracle = oracle or GridOracle(game, grid, tol)
    return [ids for ids in oracle.all_joint_ids() if oracle.is_equilibrium_ids(ids, eps)]


@dataclass(frozen=True)
class BarDelta:
    value: float
    profile: np.ndarray  # sorted distinct elements of S
    zero_threshold: float


def compute_bar_delta(
    game: Game, grid, eps: float, tol: float = DEFAULT_TOL, oracle: Optional[GridOracle] = None
) -> BarDelta:
    """Smallest positive distance between ``eps`` and any player's suboptimality on the grid.

    Distances within ``10 * tol`` of zero count as exact zeros.
    """
    oracle = oracle or GridOracle(game, grid, tol)
    values = [np.abs(eps - oracle.gaps_ids(ids)).ravel() for ids in oracle.all_joint_ids()]
    profile = np.unique(np.concatenate(values))
    threshold = 10 * tol
    positive = profile[profile > threshold]
    if positive.size == 0:
        raise AllGapsZero(f"every suboptimality equals eps={eps} on this grid")
    return BarDelta(float(positive[0]), profile, threshold)


@dataclass(frozen=True)
class RhoCheck:
    passed: bool
    bound: float
    q_deviation: float
    j_deviation: float


def verify_rho_bounds(
    game: Game, grid, rho, deltas, bar_delta: float, tol: float = DEFAULT_TOL
) -> RhoCheck:
    """Check that ``rho``-perturbing the grid moves every Q* and every value by less than
    ``min_j min(delta_j, bar_delta - delta_j) / 2``."""
    n = game.num_players
    deltas = np.broadcast_to(np.asarray(deltas, dtype=float), (n,))
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (n,))
    if np.any(deltas <= 0) or np.any(deltas >= bar_delta):
        raise ValueError(f"deltas must lie in (0, {bar_delta}), got {deltas.tolist()}")
    bound = 0.5 * float(np.min(np.minimum(deltas, bar_delta - deltas)))
    oracle = GridOracle(game, grid, tol)
    q_dev = j_dev = 0.0
    for ids in oracle.all_joint_ids():
        joint = oracle.joint(ids)
        hat = perturb_joint(joint, rho)
        for i in range(n):
            j_dev = max(
                j_dev,
                float(np.max(np.abs(oracle.value(i, joint) - evaluate_policy(game, hat, i, tol)))),
            )
            if ids[i] == 0:
                # Q* depends on the others only: visit each pi^{-i} once
                q_hat = solve_q_star(induce_mdp(game, i, hat), tol)
                q_dev = max(q_dev, float(np.max(np.abs(oracle.q_star(i, joint) - q_hat))))
    return RhoCheck(q_dev < bound and j_dev < bound, bound, q_dev, j_dev)


def find_rho_threshold(
    game: Game, grid, deltas, bar_delta: float, tol: float = DEFAULT_TOL,
    rho0: float = 0.5, max_halvings: int = 20,
) -> tuple[float, int, RhoCheck]:
    """Halve ``rho`` from ``rho0`` until :func:`verify_rho_bounds` passes."""
    rho = rho0
    for halvings in range(max_halvings + 1):
        check = verify_rho_bounds(game, grid, rho, deltas, bar_delta, tol)
        if check.passed:
            return rho, halvings, check
        rho /= 2.0
    raise RuntimeError(f"rho bounds still violated after {max_halvings} halvings")
