"""Stationary policies, the uniform simplex grid and operations on them.

A stationary policy is a float array of shape ``(num_states, num_actions)``
whose rows are probability vectors; a joint policy is a tuple of those, one
per player.  Grid policies are also addressed by an integer id: the grid-point
index of each state's row, read as a mixed-radix number with state 0 most
significant.
"""
from __future__ import annotations

from math import comb
from typing import Iterator, Sequence

import numpy as np

from .errors import CombinatorialBlowup, ShapeMismatch

DEFAULT_CAP = 10**7


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """Nonnegative integer vectors of length ``parts`` summing to ``total``, in lexicographic order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


class QuantizedPolicySet:
    """Stationary policies whose probabilities are multiples of ``1/m``.

    ``numerators`` holds the grid points as integer vectors (each summing to
    ``m``) in lexicographic order; that order fixes grid-point indices, policy
    ids, the uniform draw over the set and every tie-break.
    """

    def __init__(self, num_actions: int, num_states: int, m: int, cap: int = DEFAULT_CAP):
        if m < 1:
            raise ValueError(f"grid resolution must be >= 1, got {m}")
        if num_actions < 1 or num_states < 1:
            raise ValueError("need at least one action and one state")
        self.num_actions = int(num_actions)
        self.num_states = int(num_states)
        self.m = int(m)
        self.cap = int(cap)
        self.numerators = np.array(list(compositions(self.m, self.num_actions)), dtype=np.int64)
        assert len(self.numerators) == comb(self.m + self.num_actions - 1, self.num_actions - 1)
        self.points = self.numerators / self.m
        self.points.setflags(write=False)
        self._index = {tuple(row): k for k, row in enumerate(self.numerators.tolist())}

    def __repr__(self):
        return (
            f"QuantizedPolicySet(num_actions={self.num_actions}, "
            f"num_states={self.num_states}, m={self.m})"
        )

    @property
    def num_points(self) -> int:
        return len(self.numerators)

    @property
    def num_policies(self) -> int:
        return self.num_points**self.num_states

    def __len__(self) -> int:
        return self.num_policies

    def point_index(self, row) -> int:
        """Index of a grid point given as floats; raises KeyError if ``row`` is off the grid."""
        scaled = np.asarray(row, dtype=float) * self.m
        ints = np.rint(scaled)
        if scaled.shape != (self.num_actions,) or np.max(np.abs(scaled - ints)) > 1e-9:
            raise KeyError(f"{row!r} is not a grid point")
        return self._index[tuple(int(v) for v in ints)]

    def __contains__(self, policy) -> bool:
        policy = np.asarray(policy, dtype=float)
        if policy.shape != (self.num_states, self.num_actions):
            return False
        try:
            for row in policy:
                self.point_index(row)
        except KeyError:
            return False
        return True

    def point_indices(self, policy_id: int) -> list[int]:
        if not 0 <= policy_id < self.num_policies:
            raise IndexError(f"policy id {policy_id} out of range")
        out = []
        for _ in range(self.num_states):
            policy_id, r = divmod(policy_id, self.num_points)
            out.append(r)
        return out[::-1]

    def policy(self, policy_id: int) -> np.ndarray:
        return self.points[self.point_indices(int(policy_id))]

    def policy_numerators(self, policy_id: int) -> np.ndarray:
        return self.numerators[self.point_indices(int(policy_id))]

    def policy_id(self, policy) -> int:
        policy = np.asarray(policy, dtype=float)
        if policy.shape != (self.num_states, self.num_actions):
            raise ShapeMismatch(f"policy shape {policy.shape} does not match grid")
        pid = 0
        for row in policy:
            pid = pid * self.num_points + self.point_index(row)
        return pid

    def ids_from_point_indices(self, indices: Sequence[int]) -> int:
        pid = 0
        for k in indices:
            pid = pid * self.num_points + int(k)
        return pid

    def check_enumerable(self, size=None):
        size = self.num_policies if size is None else size
        if size > self.cap:
            raise CombinatorialBlowup(size, self.cap)

    def __iter__(self) -> Iterator[np.ndarray]:
        self.check_enumerable()
        for pid in range(self.num_policies):
            yield self.policy(pid)

    def random_id(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.num_policies))


def build_quantized_set(action_count: int, state_count: int, m: int, cap: int = DEFAULT_CAP):
    if action_count < 2:
        raise ValueError("the grid needs at least two actions")
    return QuantizedPolicySet(action_count, state_count, m, cap)


def uniform_policy(num_states: int, num_actions: int) -> np.ndarray:
    return np.full((num_states, num_actions), 1.0 / num_actions)


def deterministic_policy(actions: Sequence[int], num_actions: int) -> np.ndarray:
    policy = np.zeros((len(actions), num_actions))
    policy[np.arange(len(actions)), actions] = 1.0
    return policy


def perturb(policy, rho: float) -> np.ndarray:
    """Mix every row with the uniform distribution, weight ``rho`` on uniform."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    policy = np.asarray(policy, dtype=float)
    return (1.0 - rho) * policy + rho / policy.shape[-1]


def perturb_joint(joint, rho) -> tuple[np.ndarray, ...]:
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (len(joint),))
    return tuple(perturb(p, r) for p, r in zip(joint, rho))


def policy_distance(a, b) -> float:
    """Largest absolute difference in any action probability, over players and states."""
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = (a,), (b,)
    if len(a) != len(b):
        raise ShapeMismatch(f"joint policies have {len(a)} and {len(b)} players")
    dist = 0.0
    for pa, pb in zip(a, b):
        pa, pb = np.asarray(pa, dtype=float), np.asarray(pb, dtype=float)
        if pa.shape != pb.shape:
            raise ShapeMismatch(f"policy shapes {pa.shape} and {pb.shape} differ")
        if pa.size:
            dist = max(dist, float(np.max(np.abs(pa - pb))))
    return dist


def nearest_point_index(row, grid: QuantizedPolicySet, tie_tol: float = 1e-12) -> int:
    """Grid point closest to ``row`` in sup-norm; ties go to the lowest index."""
    dist = np.max(np.abs(grid.points - np.asarray(row, dtype=float)), axis=1)
    return int(np.flatnonzero(dist <= dist.min() + tie_tol)[0])


def project_to_grid(target, grid: QuantizedPolicySet) -> np.ndarray:
    """Per-state sup-norm projection of ``target`` onto the grid."""
    target = np.asarray(target, dtype=float)
    if target.shape != (grid.num_states, grid.num_actions):
        raise ShapeMismatch(f"target shape {target.shape} does not match grid")
    return grid.points[[nearest_point_index(row, grid) for row in target]]


def project_to_grid_id(target, grid: QuantizedPolicySet) -> int:
    return grid.ids_from_point_indices(nearest_point_index(row, grid) for row in target)


def sample_action(rng: np.random.Generator, policy, x: int) -> int:
    row = np.asarray(policy)[x]
    a = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    return min(a, len(row) - 1)
