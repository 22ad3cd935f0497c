"""Ready-made games used by the tests, the acceptance suite and the CLI."""
from __future__ import annotations

import itertools

import numpy as np

from .game import Game, GameSpec, validate_game

# Row player's reward; rows/columns are Rock, Paper, Scissors.
RPS_REWARD = np.array(
    [
        [0.0, -1.0, 1.0],
        [1.0, 0.0, -1.0],
        [-1.0, 1.0, 0.0],
    ]
)
ROCK, PAPER, SCISSORS = 0, 1, 2


def rock_paper_scissors(discount: float = 0.0) -> Game:
    """Stateless two-player RPS with costs equal to negated rewards."""
    # zero-sum: the column player's cost is the row player's reward
    cost = np.stack([0.0 - RPS_REWARD.reshape(1, 9), RPS_REWARD.reshape(1, 9)])
    return validate_game(
        GameSpec(
            num_players=2,
            num_states=1,
            num_actions=[3, 3],
            discount=[discount, discount],
            cost=cost,
            kernel=np.ones((1, 9, 1)),
            initial_dist=np.ones(1),
        )
    )


def matrix_game(costs, discount: float = 0.0) -> Game:
    """Stateless game from a list of per-player cost tensors of shape ``num_actions``."""
    costs = [np.asarray(c, dtype=float) for c in costs]
    n_actions = costs[0].shape
    nj = int(np.prod(n_actions))
    return validate_game(
        GameSpec(
            num_players=len(costs),
            num_states=1,
            num_actions=list(n_actions),
            discount=[discount] * len(costs),
            cost=np.stack([c.reshape(1, nj) for c in costs]),
            kernel=np.ones((1, nj, 1)),
            initial_dist=np.ones(1),
        )
    )


def random_symmetric_game(
    rng: np.random.Generator,
    num_players: int,
    num_states: int,
    num_actions: int,
    discount: float = 0.5,
    cost_scale: float = 1.0,
    min_prob: float = 0.0,
) -> Game:
    """Random game whose costs depend on (state, own action, multiset of others' actions)
    and whose kernel depends on (state, multiset of all actions).  Such games are
    symmetric by construction."""
    n, ns, na = num_players, num_states, num_actions
    nj = na**n
    cost_vals: dict = {}
    kern_vals: dict = {}
    cost = np.empty((n, ns, nj))
    kernel = np.empty((ns, nj, ns))
    for x in range(ns):
        for jidx, a in enumerate(itertools.product(range(na), repeat=n)):
            key = (x, tuple(sorted(a)))
            if key not in kern_vals:
                row = rng.random(ns) + min_prob
                kern_vals[key] = row / row.sum()
            kernel[x, jidx] = kern_vals[key]
            for i in range(n):
                ckey = (x, a[i], tuple(sorted(a[:i] + a[i + 1:])))
                if ckey not in cost_vals:
                    cost_vals[ckey] = cost_scale * (2.0 * rng.random() - 1.0)
                cost[i, x, jidx] = cost_vals[ckey]
    init = rng.random(ns)
    return validate_game(
        GameSpec(
            num_players=n,
            num_states=ns,
            num_actions=[na] * n,
            discount=[discount] * n,
            cost=cost,
            kernel=kernel,
            initial_dist=init / init.sum(),
        )
    )


def random_game(
    rng: np.random.Generator,
    num_players: int,
    num_states: int,
    num_actions,
    discount: float = 0.5,
    min_prob: float = 0.0,
) -> Game:
    """Unstructured random game (generally not symmetric)."""
    if isinstance(num_actions, int):
        num_actions = [num_actions] * num_players
    nj = int(np.prod(num_actions))
    kernel = rng.random((num_states, nj, num_states)) + min_prob
    kernel /= kernel.sum(axis=2, keepdims=True)
    init = rng.random(num_states)
    return validate_game(
        GameSpec(
            num_players=num_players,
            num_states=num_states,
            num_actions=list(num_actions),
            discount=[discount] * num_players,
            cost=2.0 * rng.random((num_players, num_states, nj)) - 1.0,
            kernel=kernel,
            initial_dist=init / init.sum(),
        )
    )


BUILTIN_GAMES = {
    "rps": rock_paper_scissors,
}
