"""Finite discounted stochastic games: storage, validation and structural checks.

Joint actions are flattened row-major in player order, so for action counts
``(n_0, ..., n_{N-1})`` the joint action ``(a_0, ..., a_{N-1})`` has index
``np.ravel_multi_index(a, n)``.  Costs are stored as ``cost[player, state, joint]``
and the transition kernel as ``kernel[state, joint, next_state]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    EmptyStateOrActionSet,
    GameValidationError,
    InvalidDistribution,
    KernelRowNotStochastic,
    NegativeProbability,
    NonFiniteCost,
    ShapeMismatch,
)

PROB_TOL = 1e-12
SYMMETRY_TOL = 1e-9


@dataclass
class GameSpec:
    """Raw, unvalidated game description (what a JSON game file holds)."""

    num_players: int
    num_states: int
    num_actions: Sequence[int]
    discount: Sequence[float]
    cost: np.ndarray  # (player, state, joint)
    kernel: np.ndarray  # (state, joint, next_state)
    initial_dist: np.ndarray  # (state,)

    @classmethod
    def from_dict(cls, data: dict) -> "GameSpec":
        try:
            num_players = int(data["num_players"])
            num_actions = data["num_actions"]
            if isinstance(num_actions, int):
                num_actions = [num_actions] * num_players
            discount = data["discount"]
            if isinstance(discount, (int, float)):
                discount = [discount] * num_players
            num_states = int(data["num_states"])
            initial = data.get("initial_dist")
            if initial is None:
                initial = np.full(num_states, 1.0 / num_states) if num_states else []
            return cls(
                num_players=num_players,
                num_states=num_states,
                num_actions=[int(n) for n in num_actions],
                discount=[float(b) for b in discount],
                cost=np.asarray(data["cost"], dtype=float),
                kernel=np.asarray(data["kernel"], dtype=float),
                initial_dist=np.asarray(initial, dtype=float),
            )
        except KeyError as exc:
            raise GameValidationError(f"game file missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise GameValidationError(f"malformed game file: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "num_players": int(self.num_players),
            "num_states": int(self.num_states),
            "num_actions": [int(n) for n in self.num_actions],
            "discount": [float(b) for b in self.discount],
            "cost": np.asarray(self.cost).tolist(),
            "kernel": np.asarray(self.kernel).tolist(),
            "initial_dist": np.asarray(self.initial_dist).tolist(),
        }


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Game:
    """A validated game.  Arrays are read-only; construct through :func:`validate_game`."""

    num_actions: tuple[int, ...]
    discount: np.ndarray
    cost: np.ndarray
    kernel: np.ndarray
    initial_dist: np.ndarray
    c_max: float = field(init=False)
    value_bound: np.ndarray = field(init=False)

    def __post_init__(self):
        c_max = float(np.max(np.abs(self.cost))) if self.cost.size else 0.0
        object.__setattr__(self, "c_max", c_max)
        object.__setattr__(self, "value_bound", _frozen(c_max / (1.0 - self.discount)))

    @property
    def num_players(self) -> int:
        return len(self.num_actions)

    @property
    def num_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def num_joint_actions(self) -> int:
        return int(np.prod(self.num_actions))

    def joint_index(self, actions: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(actions), self.num_actions))

    def joint_actions(self, index: int) -> tuple[int, ...]:
        return tuple(int(a) for a in np.unravel_index(index, self.num_actions))

    def cost_tensor(self, player: int) -> np.ndarray:
        """Costs of ``player`` with the joint action unflattened: (state, a_0, ..., a_{N-1})."""
        return self.cost[player].reshape((self.num_states,) + self.num_actions)

    def kernel_tensor(self) -> np.ndarray:
        """Kernel with the joint action unflattened: (state, a_0, ..., a_{N-1}, next_state)."""
        return self.kernel.reshape((self.num_states,) + self.num_actions + (self.num_states,))

    def stage_costs(self, x: int, joint: int) -> np.ndarray:
        return self.cost[:, x, joint]

    def to_spec(self) -> GameSpec:
        return GameSpec(
            num_players=self.num_players,
            num_states=self.num_states,
            num_actions=list(self.num_actions),
            discount=self.discount.tolist(),
            cost=np.array(self.cost),
            kernel=np.array(self.kernel),
            initial_dist=np.array(self.initial_dist),
        )


def validate_game(spec: GameSpec, tol: float = PROB_TOL) -> Game:
    """Check well-formedness of ``spec`` and return an immutable :class:`Game`."""
    n = int(spec.num_players)
    if n < 1:
        raise EmptyStateOrActionSet("a game needs at least one player")
    if int(spec.num_states) < 1:
        raise EmptyStateOrActionSet("a game needs at least one state")
    num_actions = tuple(int(a) for a in spec.num_actions)
    if len(num_actions) != n:
        raise ShapeMismatch(f"num_actions has {len(num_actions)} entries for {n} players")
    if any(a < 1 for a in num_actions):
        raise EmptyStateOrActionSet(f"empty action set in {num_actions}")
    discount = np.asarray(spec.discount, dtype=float).reshape(-1)
    if discount.shape != (n,):
        raise ShapeMismatch(f"discount has shape {discount.shape}, expected ({n},)")
    if np.any(discount < 0) or np.any(discount >= 1):
        raise GameValidationError(f"discount factors must lie in [0, 1): {discount.tolist()}")

    ns = int(spec.num_states)
    nj = int(np.prod(num_actions))
    cost = np.asarray(spec.cost, dtype=float)
    if cost.shape != (n, ns, nj):
        raise ShapeMismatch(f"cost has shape {cost.shape}, expected {(n, ns, nj)}")
    if not np.all(np.isfinite(cost)):
        raise NonFiniteCost("cost table contains non-finite entries")

    kernel = np.asarray(spec.kernel, dtype=float)
    if kernel.shape != (ns, nj, ns):
        raise ShapeMismatch(f"kernel has shape {kernel.shape}, expected {(ns, nj, ns)}")
    if not np.all(np.isfinite(kernel)):
        raise NegativeProbability("kernel contains non-finite entries")
    if np.any(kernel < 0):
        x, a, y = np.argwhere(kernel < 0)[0]
        raise NegativeProbability(f"P({y} | {x}, {a}) = {kernel[x, a, y]!r} is negative")
    sums = kernel.sum(axis=2)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        x, a = np.argwhere(bad)[0]
        raise KernelRowNotStochastic(int(x), int(a), float(sums[x, a]))

    nu = np.asarray(spec.initial_dist, dtype=float).reshape(-1)
    if nu.shape != (ns,):
        raise ShapeMismatch(f"initial_dist has shape {nu.shape}, expected ({ns},)")
    if np.any(nu < 0) or not np.all(np.isfinite(nu)):
        raise NegativeProbability("initial distribution has negative or non-finite entries")
    if abs(nu.sum() - 1.0) > tol:
        raise InvalidDistribution(f"initial distribution sums to {nu.sum()!r}")

    return Game(
        num_actions=num_actions,
        discount=_frozen(discount),
        cost=_frozen(cost),
        kernel=_frozen(kernel),
        initial_dist=_frozen(nu),
    )


def load_game(path) -> Game:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GameValidationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return validate_game(GameSpec.from_dict(data))


def save_game(game: Game | GameSpec, path) -> None:
    spec = game.to_spec() if isinstance(game, Game) else game
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1))


# --------------------------------------------------------------------------
# structural checks


@dataclass(frozen=True)
class SymmetryWitness:
    transposition: tuple[int, int]
    condition: str  # "actions", "discount", "cost" or "kernel"
    state: Optional[int] = None
    joint_action: Optional[tuple[int, ...]] = None
    player: Optional[int] = None
    difference: float = 0.0


@dataclass(frozen=True)
class SymmetryReport:
    is_symmetric: bool
    witness: Optional[SymmetryWitness] = None

    def __bool__(self):
        return self.is_symmetric


def _transpositions(n: int):
    # adjacent transpositions generate S_n
    return [(i, i + 1) for i in range(n - 1)]


def check_symmetry(game: Game, tol: float = SYMMETRY_TOL) -> SymmetryReport:
    """Test invariance of actions, discounts, costs and kernel under player swaps.

    For a swap ``s = (i j)``, ``s(a)`` exchanges the actions of ``i`` and ``j``;
    the game is symmetric when ``c^k(x, s(a)) == c^{s(k)}(x, a)`` and
    ``P(.|x, s(a)) == P(.|x, a)`` for every player ``k``, state and joint action.
    """
    n = game.num_players
    for i, j in _transpositions(n):
        if game.num_actions[i] != game.num_actions[j]:
            return SymmetryReport(False, SymmetryWitness((i, j), "actions"))
        if abs(game.discount[i] - game.discount[j]) > tol:
            return SymmetryReport(False, SymmetryWitness((i, j), "discount"))

    kernel = game.kernel_tensor()
    costs = [game.cost_tensor(k) for k in range(n)]
    for i, j in _transpositions(n):
        perm = {i: j, j: i}
        for k in range(n):
            swapped = np.swapaxes(costs[k], 1 + i, 1 + j)
            diff = np.abs(swapped - costs[perm.get(k, k)])
            if np.any(diff > tol):
                idx = np.unravel_index(int(np.argmax(diff > tol)), diff.shape)
                return SymmetryReport(
                    False,
                    SymmetryWitness(
                        (i, j), "cost", int(idx[0]), tuple(int(a) for a in idx[1:]),
                        player=k, difference=float(diff[idx]),
                    ),
                )
        diff = np.abs(np.swapaxes(kernel, 1 + i, 1 + j) - kernel)
        if np.any(diff > tol):
            idx = np.unravel_index(int(np.argmax(diff > tol)), diff.shape)
            return SymmetryReport(
                False,
                SymmetryWitness(
                    (i, j), "kernel", int(idx[0]), tuple(int(a) for a in idx[1:-1]),
                    difference=float(diff[idx]),
                ),
            )
    return SymmetryReport(True)


def check_reachability(game: Game) -> bool:
    """True iff every state can reach every other under some sequence of joint actions."""
    adjacency = (game.kernel.max(axis=1) > 0).astype(np.int8)
    n_comp, _ = connected_components(csr_matrix(adjacency), directed=True, connection="strong")
    return n_comp == 1


def sample_transition(rng: np.random.Generator, game: Game, x: int, joint: int) -> int:
    """Draw the next state from ``P(. | x, joint)`` by inverse-CDF on one uniform."""
    cdf = np.cumsum(game.kernel[x, joint])
    y = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(y, game.num_states - 1)


def sample_initial_state(rng: np.random.Generator, game: Game) -> int:
    cdf = np.cumsum(game.initial_dist)
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), game.num_states - 1)
