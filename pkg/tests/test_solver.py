from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, strategies as st

from symga.errors import AllGapsZero, CombinatorialBlowup, IndeterminateMargin, ShapeMismatch
from symga.game import GameSpec, validate_game
from symga.games import RPS_REWARD, matrix_game, random_game, rock_paper_scissors
from symga.policy import build_quantized_set, deterministic_policy, uniform_policy
from symga.solver import (
    ExactOracle,
    GridOracle,
    bellman_residual,
    best_response_gaps,
    compute_bar_delta,
    evaluate_policy,
    find_quantized_equilibria,
    find_rho_threshold,
    induce_mdp,
    is_eps_best_response,
    is_eps_equilibrium,
    solve_q_star,
    verify_rho_bounds,
)

from conftest import row

ROCK, PAPER, SCISSORS = (deterministic_policy([a], 3) for a in range(3))
UNIFORM = uniform_policy(1, 3)
C = -RPS_REWARD  # row player's cost matrix


def rps_gap(p, q):
    """Independent oracle for player 0's gap in stateless RPS: p'Cq - min_a (Cq)_a."""
    cq = C @ q
    return float(p @ cq - cq.min())


def swap_mdp():
    return validate_game(GameSpec(
        num_players=1, num_states=2, num_actions=[1], discount=[0.5],
        cost=np.array([[[1.0], [0.0]]]),
        kernel=np.array([[[0.0, 1.0]], [[1.0, 0.0]]]), initial_dist=np.array([1.0, 0.0]),
    ))


def test_induced_costs_vs_uniform(rps):
    mdp = induce_mdp(rps, 0, (UNIFORM, UNIFORM))
    assert np.allclose(mdp.cost, 0.0)


def test_induced_costs_vs_rock(rps):
    mdp = induce_mdp(rps, 0, (UNIFORM, ROCK))
    assert np.allclose(mdp.cost[0], [0.0, -1.0, 1.0])
    # player 1's own policy entry is ignored
    mdp1 = induce_mdp(rps, 1, (ROCK, PAPER))
    assert np.allclose(mdp1.cost[0], [0.0, -1.0, 1.0])


def test_single_player_induced_is_game():
    game = random_game(np.random.default_rng(2), 1, 3, 2)
    mdp = induce_mdp(game, 0, (uniform_policy(3, 2),))
    assert np.allclose(mdp.cost, game.cost[0]) and np.allclose(mdp.kernel, game.kernel)


def test_q_star_myopic_equals_costs(rps):
    mdp = induce_mdp(rps, 0, (UNIFORM, ROCK))
    assert np.array_equal(solve_q_star(mdp), mdp.cost)
    assert np.allclose(solve_q_star(induce_mdp(rps, 0, (UNIFORM, UNIFORM))), 0.0)


def test_hand_computed_two_state_mdp():
    q = solve_q_star(induce_mdp(swap_mdp(), 0, (np.ones((2, 1)),)), 1e-10)
    assert np.allclose(q[:, 0], [4 / 3, 2 / 3], atol=1e-9)


@given(st.integers(0, 10**6), st.sampled_from([0.0, 0.3, 0.9]))
def test_bellman_residual_within_tol(seed, beta):
    game = random_game(np.random.default_rng(seed), 2, 3, 2, discount=beta)
    rng = np.random.default_rng(seed + 1)
    joint = tuple(rng.dirichlet(np.ones(2), size=3) for _ in range(2))
    mdp = induce_mdp(game, 1, joint)
    assert bellman_residual(mdp, solve_q_star(mdp, 1e-10)) <= 1e-10


@given(st.integers(0, 10**6))
def test_value_direct_and_iterative_agree(seed):
    game = random_game(np.random.default_rng(seed), 2, 3, 2, discount=0.7)
    rng = np.random.default_rng(seed + 7)
    joint = tuple(rng.dirichlet(np.ones(2), size=3) for _ in range(2))
    a = evaluate_policy(game, joint, 0, method="direct")
    b = evaluate_policy(game, joint, 0, tol=1e-12, method="iterative")
    # independent oracle: truncated Neumann series
    prob = np.einsum("xa,xb->xab", *joint).reshape(3, 4)
    c = np.einsum("xj,xj->x", prob, game.cost[0])
    p = np.einsum("xj,xjy->xy", prob, game.kernel)
    series = sum(np.linalg.matrix_power(0.7 * p, k) @ c for k in range(200))
    assert np.allclose(a, b, atol=1e-10) and np.allclose(a, series, atol=1e-10)


def test_values_rps(rps):
    assert np.allclose(evaluate_policy(rps, (UNIFORM, UNIFORM), 0), 0.0)
    assert np.allclose(evaluate_policy(rps, (SCISSORS, ROCK), 0), 1.0)
    zero = matrix_game([np.zeros((2, 2))] * 2, discount=0.5)
    assert np.allclose(evaluate_policy(zero, (uniform_policy(1, 2),) * 2, 1), 0.0)


def test_best_response_examples(rps):
    assert is_eps_best_response(rps, 0, (row(0.2, 0.5, 0.3), UNIFORM), 0.0)
    assert not is_eps_best_response(rps, 0, (SCISSORS, ROCK), 0.2)
    assert is_eps_best_response(rps, 0, (SCISSORS, ROCK), 2.0)  # 2 c_max / (1 - beta)


def test_equilibrium_examples(rps):
    assert is_eps_equilibrium(rps, (UNIFORM, UNIFORM), 0.0, certify=True)
    assert not is_eps_equilibrium(rps, (ROCK, ROCK), 0.2, certify=True)
    zero = matrix_game([np.zeros((2, 2))] * 2)
    assert is_eps_equilibrium(zero, (row(1, 0), row(0.3, 0.7)), 0.0)


def test_negative_eps_rejected(rps):
    with pytest.raises(ValueError):
        is_eps_best_response(rps, 0, (UNIFORM, UNIFORM), -0.1)


@given(st.integers(0, 65), st.integers(0, 65))
def test_gaps_match_matrix_oracle(a, b):
    game, grid = rock_paper_scissors(), build_quantized_set(3, 1, 10)
    p, q = grid.points[a], grid.points[b]
    gaps = best_response_gaps(game, 0, (p[None], q[None]))
    assert gaps[0] == pytest.approx(rps_gap(p, q), abs=1e-12)
    assert gaps[0] >= -1e-12


def test_indeterminate_margin_raised_in_certify_mode():
    # beta > 0 makes value iteration tol-accurate only; nudge eps onto the gap
    game = random_game(np.random.default_rng(3), 2, 2, 2, discount=0.6)
    joint = (uniform_policy(2, 2), np.array([[1.0, 0.0], [0.3, 0.7]]))
    gap = best_response_gaps(game, 0, joint, 1e-10).max()
    eps = gap + 5e-11
    assert is_eps_best_response(game, 0, joint, eps)
    with pytest.raises(IndeterminateMargin):
        is_eps_best_response(game, 0, joint, eps, certify=True)


def brute_equilibria(eps, m=10):
    """Exact rational scan of RPS equilibria on the m-grid."""
    pts = [tuple(Fraction(v, m) for v in p) for p in
           ((a, b, m - a - b) for a in range(m + 1) for b in range(m + 1 - a))]
    cm = [[Fraction(int(v)) for v in r] for r in C]

    def gap(p, q):
        cq = [sum(cm[a][b] * q[b] for b in range(3)) for a in range(3)]
        return sum(p[a] * cq[a] for a in range(3)) - min(cq)

    eps = Fraction(eps).limit_denominator(1000)
    return {(i, j) for i, p in enumerate(pts) for j, q in enumerate(pts)
            if gap(p, q) <= eps and gap(q, p) <= eps}


def test_quantized_equilibria_rps(rps, grid10, rps_oracle):
    eqs = find_quantized_equilibria(rps, grid10, 0.2, oracle=rps_oracle)
    assert set(eqs) == brute_equilibria(0.2)
    assert len(eqs) == 39
    mid = grid10.policy_id(row(0.3, 0.3, 0.4))
    assert (mid, mid) in eqs


def test_no_rps_equilibria_on_m4():
    grid = build_quantized_set(3, 1, 4)
    assert find_quantized_equilibria(rock_paper_scissors(), grid, 0.2) == []
    assert brute_equilibria(0.2, 4) == set()
    assert len(brute_equilibria(0.25, 4)) > 0


def test_huge_eps_gives_whole_grid(rps):
    grid = build_quantized_set(3, 1, 2)
    assert len(find_quantized_equilibria(rps, grid, 2.0)) == 36


def test_dominant_team_game():
    team = np.array([[0.0, 1.0], [1.0, 2.0]])
    game = matrix_game([team, team])
    grid = build_quantized_set(2, 1, 1)
    eqs = find_quantized_equilibria(game, grid, 0.0)
    first = grid.policy_id(row(1, 0))
    assert eqs == [(first, first)]


def test_oracle_caches_agree_with_direct(rps, rps_oracle):
    joint = rps_oracle.joint((12, 40))
    for i in range(2):
        assert np.allclose(rps_oracle.gaps(i, joint), best_response_gaps(rps, i, joint))


def test_grid_oracle_cap():
    game = random_game(np.random.default_rng(0), 3, 2, 3)
    oracle = GridOracle(game, build_quantized_set(3, 2, 4, cap=1000))
    with pytest.raises(CombinatorialBlowup):
        list(oracle.all_joint_ids())


def test_grid_shape_mismatch(rps):
    with pytest.raises(ShapeMismatch):
        GridOracle(rps, build_quantized_set(2, 1, 3))


def exact_bar_delta(eps, m=10):
    pts = [(a, b, m - a - b) for a in range(m + 1) for b in range(m + 1 - a)]
    cm = np.array(C, dtype=int)
    values = set()
    for p, q in product(pts, pts):
        cq = cm @ np.array(q)
        values.add(abs(Fraction(eps) - Fraction(int(np.dot(p, cq)) - m * int(cq.min()), m * m)))
    return min(v for v in values if v > 0)


def test_bar_delta_rps(rps, grid10, rps_oracle):
    bd = compute_bar_delta(rps, grid10, 0.2, oracle=rps_oracle)
    assert bd.value > 0
    assert bd.value == pytest.approx(float(exact_bar_delta(Fraction(1, 5))), abs=1e-12)
    bd0 = compute_bar_delta(rps, grid10, 0.0, oracle=rps_oracle)
    assert bd0.value == pytest.approx(float(exact_bar_delta(Fraction(0))), abs=1e-12)


def test_bar_delta_constant_costs():
    game = matrix_game([np.ones((2, 2))] * 2)
    bd = compute_bar_delta(game, build_quantized_set(2, 1, 2), 0.3)
    assert bd.value == pytest.approx(0.3)
    with pytest.raises(AllGapsZero):
        compute_bar_delta(game, build_quantized_set(2, 1, 2), 0.0)


def test_rho_bounds(rps):
    grid = build_quantized_set(3, 1, 4)
    bd = compute_bar_delta(rps, grid, 0.25)
    assert verify_rho_bounds(rps, grid, 1e-8, [bd.value / 2] * 2, bd.value).passed
    assert not verify_rho_bounds(rps, grid, 0.5, [bd.value / 2] * 2, bd.value).passed
    with pytest.raises(ValueError):
        verify_rho_bounds(rps, grid, 0.1, [bd.value] * 2, bd.value)
    with pytest.raises(ValueError):
        verify_rho_bounds(rps, grid, 0.1, [0.0, 0.01], bd.value)


def test_rho_threshold_rps(rps, grid10):
    bd = compute_bar_delta(rps, grid10, 0.2)
    rho, halvings, check = find_rho_threshold(rps, grid10, [bd.value / 2] * 2, bd.value)
    assert check.passed and halvings <= 20
    assert rho == 0.5 / 2**halvings
    # the last failing rho really fails
    assert not verify_rho_bounds(rps, grid10, 2 * rho, [bd.value / 2] * 2, bd.value).passed
