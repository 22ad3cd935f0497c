"""Revision paths: validity checks, the cohort-growth constructor for symmetric games,
and a scan of the path property over a joint grid.

A revision path is a finite sequence of joint policies in which a player that
is eps-best-responding at step k keeps its policy at step k+1.  In symmetric
games such a path into the eps-equilibrium set can be built explicitly by
letting a growing cohort of players copy a single policy; it never needs more
than ``N + 1`` joint policies.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NoTargetEquilibrium, NotSymmetric
from .game import Game, check_symmetry
from .solver import DEFAULT_TOL, ExactOracle, GridOracle, find_quantized_equilibria


@dataclass
class RevisionPath:
    steps: list  # joint policies, each a tuple of (state, action) arrays
    eps: float
    certificates: list  # per step, per player: was eps-best-responding
    cohorts: Optional[list] = None  # per step, the copying cohort (constructor output only)
    ids: Optional[list] = None  # per step, the joint grid ids when known

    def __post_init__(self):
        if not self.steps:
            raise ValueError("a revision path has at least one step")
        n = len(self.steps[0])
        if len(self.certificates) != len(self.steps) or any(len(c) != n for c in self.certificates):
            raise ValueError("certificates must have one flag per player per step")

    def __len__(self) -> int:
        return len(self.steps)

    def to_json(self) -> str:
        return json.dumps(
            {
                "eps": self.eps,
                "steps": [[p.tolist() for p in joint] for joint in self.steps],
                "certificates": [list(map(bool, c)) for c in self.certificates],
                "cohorts": None if self.cohorts is None else [sorted(s) for s in self.cohorts],
                "ids": None if self.ids is None else [list(map(int, t)) for t in self.ids],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "RevisionPath":
        d = json.loads(text)
        return cls(
            steps=[tuple(np.asarray(p, dtype=float) for p in joint) for joint in d["steps"]],
            eps=float(d["eps"]),
            certificates=[tuple(c) for c in d["certificates"]],
            cohorts=None if d.get("cohorts") is None else [frozenset(s) for s in d["cohorts"]],
            ids=None if d.get("ids") is None else [tuple(t) for t in d["ids"]],
        )


@dataclass
class PathWitness:
    step: int
    player: int
    reason: str


@dataclass
class PathReport:
    valid: bool
    terminal_is_eq: bool
    witness: Optional[PathWitness] = None
    certificates: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.valid


def _same(a, b) -> bool:
    return np.array_equal(np.asarray(a), np.asarray(b))


def is_valid_revision_path(game: Game, path: RevisionPath, tol: float = DEFAULT_TOL,
                           certify: bool = True, oracle: Optional[ExactOracle] = None) -> PathReport:
    """Recompute satisfaction at every step and check that satisfied players never move.

    With ``certify`` a satisfaction margin inside the numerical slack raises
    :class:`IndeterminateMargin` instead of being read as satisfied.  A stored
    certificate that disagrees with the recomputed one makes the path invalid.
    """
    oracle = oracle or ExactOracle(game, tol)
    certs = [oracle.satisfaction(joint, path.eps, certify) for joint in path.steps]
    for k, (stored, fresh) in enumerate(zip(path.certificates, certs)):
        for i, (a, b) in enumerate(zip(stored, fresh)):
            if bool(a) != bool(b):
                return PathReport(False, all(certs[-1]),
                                  PathWitness(k, i, "stored certificate disagrees"), certs)
    for k in range(len(path) - 1):
        for i, sat in enumerate(certs[k]):
            if sat and not _same(path.steps[k][i], path.steps[k + 1][i]):
                return PathReport(False, all(certs[-1]),
                                  PathWitness(k, i, "satisfied player changed policy"), certs)
    return PathReport(True, all(certs[-1]), None, certs)


def _as_ids(joint, oracle: GridOracle) -> tuple:
    out = []
    for i, p in enumerate(joint):
        if isinstance(p, (int, np.integer)):
            out.append(int(p))
        else:
            out.append(oracle.grids[i].policy_id(p))
    return tuple(out)


def construct_symmetric_path(
    game: Game, grid, start, eps: float, target_eq, tol: float = DEFAULT_TOL,
    oracle: Optional[GridOracle] = None, certify: bool = True, check: bool = True,
) -> RevisionPath:
    """Build a revision path from ``start`` into the eps-equilibrium set by cohort growth.

    ``start`` and ``target_eq`` are joint grid policies, given as arrays or ids.
    At each step either everybody jumps to ``target_eq`` (the cohort is everyone), an
    unsatisfied outsider joins the cohort by copying it, or an unsatisfied cohort
    copies an outsider.  Distinguished players and cohort representatives are the
    lowest eligible index.
    """
    oracle = oracle or GridOracle(game, grid, tol)
    if check:
        report = check_symmetry(game)
        if not report:
            raise NotSymmetric(report.witness)
    if target_eq is None:
        raise NoTargetEquilibrium("no target equilibrium supplied")
    target = _as_ids(target_eq, oracle)
    if not oracle.is_equilibrium_ids(target, eps):
        raise NoTargetEquilibrium(f"target {target} is not an eps-equilibrium at eps={eps}")
    n = game.num_players
    ids = [_as_ids(start, oracle)]
    certs = [oracle.satisfaction_ids(ids[0], eps, certify)]
    unsatisfied = frozenset(i for i in range(n) if not certs[0][i])
    cohorts = [unsatisfied]

    def push(new_ids, cohort):
        ids.append(tuple(new_ids))
        certs.append(oracle.satisfaction_ids(ids[-1], eps, certify))
        cohorts.append(frozenset(cohort))

    if unsatisfied and len(unsatisfied) < n:
        # unsatisfied players copy the lowest-index satisfied player
        j = min(set(range(n)) - unsatisfied)
        cur = ids[0]
        new = [cur[j] if i in unsatisfied else cur[i] for i in range(n)]
        push(new, {i for i in range(n) if new[i] == cur[j]})
    while not all(certs[-1]):
        cur, cohort, sat = ids[-1], cohorts[-1], certs[-1]
        if len(cohort) == n:
            # whole population shares a policy and, by symmetry, nobody is satisfied
            push(target, set(range(n)))
            break
        rep = min(cohort)
        outside = sorted(set(range(n)) - cohort)
        if sat[rep]:
            j = next((i for i in outside if not sat[i]), None)
            if j is None:  # pragma: no cover - excluded since cur is not an equilibrium
                raise RuntimeError("satisfied cohort with no unsatisfied outsider")
            new = list(cur)
            new[j] = cur[rep]
            push(new, cohort | {j})
        else:
            j = outside[0]
            new = [cur[j] if i in cohort else cur[i] for i in range(n)]
            push(new, {i for i in range(n) if new[i] == cur[j]})
    steps = [oracle.joint(t) for t in ids]
    return RevisionPath(steps, eps, certs, cohorts, ids)


def cohort_properties_hold(path: RevisionPath) -> bool:
    """Shared policy inside each cohort, strict growth, and distinct policies outside,
    checked at every step that was produced by cohort growth (not the final jump)."""
    if path.cohorts is None or path.ids is None:
        raise ValueError("path has no cohort record")
    n = len(path.ids[0])
    for k in range(1, len(path)):
        cohort, cur = path.cohorts[k], path.ids[k]
        if len(cohort) == n and all(path.certificates[k]):
            continue  # final jump to the target
        if len(cohort) < len(path.cohorts[k - 1]) + 1:
            return False
        members = {cur[i] for i in cohort}
        if len(members) != 1:
            return False
        shared = next(iter(members))
        if any(cur[i] == shared for i in range(n) if i not in cohort):
            return False
    return True


@dataclass
class PathsPropertyReport:
    holds: bool
    max_length: int
    num_starts: int
    failures: list  # starts whose constructed path did not validate
    target: tuple


def has_revision_paths_property(
    game: Game, grid, eps: float, tol: float = DEFAULT_TOL, target_eq=None,
    oracle: Optional[GridOracle] = None,
) -> PathsPropertyReport:
    """Construct and validate a path from every joint grid policy.

    The target equilibrium defaults to the first one in enumeration order.
    Raises :class:`NoTargetEquilibrium` when the grid holds no eps-equilibrium.
    """
    oracle = oracle or GridOracle(game, grid, tol)
    report = check_symmetry(game)
    if not report:
        raise NotSymmetric(report.witness)
    starts = list(oracle.all_joint_ids())
    if target_eq is None:
        eqs = find_quantized_equilibria(game, oracle.grids, eps, tol, oracle=oracle)
        if not eqs:
            raise NoTargetEquilibrium(f"no eps-equilibrium on the grid at eps={eps}")
        target_eq = eqs[0]
    target = _as_ids(target_eq, oracle)
    failures, longest = [], 0
    for start in starts:
        path = construct_symmetric_path(game, grid, start, eps, target, tol, oracle, check=False)
        longest = max(longest, len(path))
        rep = is_valid_revision_path(game, path, tol, oracle=oracle)
        if not (rep.valid and rep.terminal_is_eq and len(path) <= game.num_players + 1):
            failures.append(start)
    return PathsPropertyReport(not failures, longest, len(starts), failures, target)


def path_from_ids(oracle: GridOracle, ids: Sequence, eps: float) -> RevisionPath:
    """Wrap a sequence of joint ids as a path, certificates from the exact solver."""
    ids = [tuple(int(v) for v in t) for t in ids]
    return RevisionPath([oracle.joint(t) for t in ids], eps,
                        [oracle.satisfaction_ids(t, eps) for t in ids], None, ids)
