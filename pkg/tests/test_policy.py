from fractions import Fraction
from itertools import product
from math import comb

import numpy as np
import pytest
from hypothesis import given, strategies as st

from symga.errors import CombinatorialBlowup, ShapeMismatch
from symga.policy import (
    QuantizedPolicySet,
    build_quantized_set,
    compositions,
    deterministic_policy,
    nearest_point_index,
    perturb,
    policy_distance,
    project_to_grid,
    sample_action,
    uniform_policy,
)

from conftest import row


def test_rps_grid_has_66_points(grid10):
    assert grid10.num_points == 66 == comb(12, 2)
    # every triple of tenths summing to one, by brute force
    brute = {(a, b, 10 - a - b) for a in range(11) for b in range(11 - a)}
    assert {tuple(r) for r in grid10.numerators.tolist()} == brute
    assert set(np.unique(grid10.points)) == {k / 10 for k in range(11)}


def test_coarsest_grid_is_deterministic_policies():
    g = build_quantized_set(2, 1, 1)
    assert {tuple(p) for p in g.points} == {(0.0, 1.0), (1.0, 0.0)}


def test_lexicographic_order():
    assert list(compositions(2, 3)) == sorted(compositions(2, 3))


@given(st.integers(1, 7), st.integers(1, 4))
def test_grid_size_formula(m, actions):
    pts = list(compositions(m, actions))
    assert len(pts) == comb(m + actions - 1, actions - 1)
    assert all(sum(p) == m and min(p) >= 0 for p in pts)


def test_policy_id_round_trip():
    g = QuantizedPolicySet(3, 2, 2)
    assert g.num_policies == 36
    for pid in range(g.num_policies):
        assert g.policy_id(g.policy(pid)) == pid
    # state 0 is the most significant digit
    assert g.point_indices(6 * 2 + 5) == [2, 5]


def test_off_grid_policy_rejected(grid10):
    assert row(1 / 3, 1 / 3, 1 / 3) not in grid10
    assert row(0.3, 0.3, 0.4) in grid10
    with pytest.raises(KeyError):
        grid10.policy_id(row(1 / 3, 1 / 3, 1 / 3))


def test_enumeration_cap():
    g = QuantizedPolicySet(3, 3, 10, cap=1000)
    with pytest.raises(CombinatorialBlowup):
        list(g)


def test_perturb_rock():
    assert np.allclose(perturb(deterministic_policy([0], 3), 0.3), [[0.8, 0.1, 0.1]])


@given(st.floats(1e-6, 0.999))
def test_perturb_uniform_fixed_point(rho):
    u = uniform_policy(2, 3)
    assert np.allclose(perturb(u, rho), u)


@given(st.integers(0, 65), st.floats(1e-6, 0.999))
def test_perturb_distance_bound(pid, rho):
    p = build_quantized_set(3, 1, 10).policy(pid)
    q = perturb(p, rho)
    assert policy_distance(p, q) <= rho + 1e-12
    assert np.allclose(q.sum(axis=1), 1.0) and q.min() >= rho / 3 - 1e-12


def test_perturb_range():
    with pytest.raises(ValueError):
        perturb(uniform_policy(1, 2), 1.0)


def test_policy_distance_examples():
    r, p = deterministic_policy([0], 3), deterministic_policy([1], 3)
    assert policy_distance(r, r) == 0.0
    assert policy_distance(r, p) == 1.0
    assert policy_distance(row(0.5, 0.5, 0), row(0.4, 0.6, 0)) == pytest.approx(0.1)
    assert policy_distance((r, p), (p, p)) == 1.0
    with pytest.raises(ShapeMismatch):
        policy_distance((r,), (r, p))


@given(st.integers(0, 65), st.integers(0, 65), st.integers(0, 65))
def test_distance_is_a_metric(a, b, c):
    g = build_quantized_set(3, 1, 10)
    pa, pb, pc = g.policy(a), g.policy(b), g.policy(c)
    assert policy_distance(pa, pb) == policy_distance(pb, pa)
    assert policy_distance(pa, pc) <= policy_distance(pa, pb) + policy_distance(pb, pc) + 1e-12


def brute_projection(target, m):
    """Independent oracle: exact rational sup-norm distances to every grid point."""
    target = [Fraction(t).limit_denominator(10**9) for t in target]
    best, best_d = None, None
    for pt in compositions(m, len(target)):
        d = max(abs(Fraction(p, m) - t) for p, t in zip(pt, target))
        if best_d is None or d < best_d:
            best, best_d = pt, d
    return np.array(best) / m


def test_projection_examples(grid10):
    assert np.array_equal(project_to_grid(row(0.3, 0.3, 0.4), grid10), row(0.3, 0.3, 0.4))
    out = project_to_grid(row(0.33, 0.33, 0.34), grid10)
    assert np.allclose(out, [[0.3, 0.3, 0.4]])
    assert np.allclose(out[0], brute_projection([0.33, 0.33, 0.34], 10))
    g1 = build_quantized_set(2, 1, 1)
    assert np.allclose(project_to_grid(row(0.6, 0.4), g1), [[1.0, 0.0]])


def test_projection_shape_mismatch(grid10):
    with pytest.raises(ShapeMismatch):
        project_to_grid(uniform_policy(2, 3), grid10)


@given(st.lists(st.integers(0, 1000), min_size=3, max_size=3).filter(lambda v: sum(v) > 0),
       st.integers(1, 6))
def test_projection_matches_brute_force(weights, m):
    target = np.array(weights, dtype=float) / sum(weights)
    grid = build_quantized_set(3, 1, m)
    got = grid.points[nearest_point_index(target, grid)]
    want = brute_projection(target, m)
    d_got = np.max(np.abs(got - target))
    d_want = np.max(np.abs(want - target))
    assert d_got == pytest.approx(d_want, abs=1e-12)


def test_sample_action_deterministic_and_uniform():
    rng = np.random.default_rng(0)
    pol = deterministic_policy([2], 3)
    assert all(sample_action(rng, pol, 0) == 2 for _ in range(100))
    u = np.random.default_rng(1).random(10**6)
    draws = np.minimum(np.searchsorted(np.cumsum([1 / 3] * 3), u, side="right"), 2)
    assert np.allclose(np.bincount(draws) / 1e6, 1 / 3, atol=0.005)
    rock = perturb(deterministic_policy([0], 3), 0.3)
    rng = np.random.default_rng(2)
    freq = np.mean([sample_action(rng, rock, 0) == 0 for _ in range(20000)])
    assert freq == pytest.approx(0.8, abs=0.01)


def test_random_id_uniform(grid10):
    rng = np.random.default_rng(4)
    ids = [grid10.random_id(rng) for _ in range(66000)]
    counts = np.bincount(ids, minlength=66)
    assert counts.min() > 800 and counts.max() < 1200


def test_grid_rows_enumerable_all_states():
    g = build_quantized_set(2, 2, 1)
    pols = list(g)
    assert len(pols) == 4
    assert {tuple(p.ravel()) for p in pols} == {tuple(np.ravel(p)) for p in
                                                (np.array(x) for x in product([[0, 1], [1, 0]], repeat=2))}
