"""Exploration phases, synchronous policy revision, trials and experiment statistics."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import RangeError, ShapeMismatch
from .game import Game, check_symmetry, sample_initial_state
from .learners import (
    LearnerParams,
    LearnerState,
    independent_update_rule_id,
    reset_estimates,
)
from .policy import build_quantized_set
from .policy import perturb_joint
from .solver import DEFAULT_TOL, GridOracle, compute_bar_delta, induce_mdp, solve_q_star

log = logging.getLogger(__name__)

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None

USE_JIT = njit is not None and os.environ.get("SYMGA_NO_JIT", "") in ("", "0")


def _maybe_jit(fn):
    if njit is None:
        return fn
    return njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# stage loop


def _learner_step(q, nq, j, nj, x, u, cost, y, beta, alpha, num_actions):
    # one agent's Q and J updates from (x, own u, own cost, y)
    n = nq[x, u]
    a = alpha[n]
    best = q[y, 0]
    for v in range(1, num_actions):
        if q[y, v] < best:
            best = q[y, v]
    q[x, u] = (1.0 - a) * q[x, u] + a * (cost + beta * best)
    nq[x, u] = n + 1
    m = nj[x]
    a = alpha[m]
    j[x] = (1.0 - a) * j[x] + a * (cost + beta * j[y])
    nj[x] = m + 1


_learner_step_jit = _maybe_jit(_learner_step)


def _phase_loop(x, env_u, agent_u, pol_cdf, num_actions, cost, kernel_cdf, betas, alpha,
                q, nq, j, nj, action_counts, step):
    num_agents, horizon = agent_u.shape
    num_states = kernel_cdf.shape[2]
    actions = np.empty(num_agents, dtype=np.int64)
    for t in range(horizon):
        joint = 0
        for i in range(num_agents):
            na = num_actions[i]
            r = agent_u[i, t]
            a = 0
            while a < na - 1 and pol_cdf[i, x, a] <= r:
                a += 1
            actions[i] = a
            action_counts[i, a] += 1
            joint = joint * na + a
        r = env_u[t]
        y = 0
        while y < num_states - 1 and kernel_cdf[x, joint, y] <= r:
            y += 1
        for i in range(num_agents):
            step(q[i], nq[i], j[i], nj[i], x, actions[i], cost[i, x, joint], y,
                 betas[i], alpha[i], num_actions[i])
        x = y
    return x


if njit is not None:
    _phase_loop_jit = njit(cache=True, nogil=True)(_phase_loop)
else:  # pragma: no cover
    _phase_loop_jit = None


@dataclass
class PhaseStats:
    stages: int
    final_state: int
    action_counts: np.ndarray  # (agent, max_actions)


class _GameArrays:
    """Contiguous arrays the stage loop reads; built once per game."""

    def __init__(self, game: Game):
        self.num_actions = np.array(game.num_actions, dtype=np.int64)
        self.max_actions = int(self.num_actions.max())
        self.cost = np.ascontiguousarray(game.cost)
        self.kernel_cdf = np.ascontiguousarray(np.cumsum(game.kernel, axis=2))
        self.betas = np.array(game.discount, dtype=float)


_ARRAYS: dict = {}


def _arrays(game: Game) -> _GameArrays:
    arr = _ARRAYS.get(id(game))
    if arr is None or arr.game is not game:
        arr = _GameArrays(game)
        arr.game = game
        _ARRAYS[id(game)] = arr
    return arr


def run_exploration_phase(
    game: Game, learners: Sequence[LearnerState], horizon: int, x: int,
    env_rng: np.random.Generator, jit: Optional[bool] = None,
) -> PhaseStats:
    """Play ``horizon`` stage games with frozen, perturbed baseline policies.

    Every agent samples from the ``rho``-perturbation of its own baseline and
    updates its own Q and J tables from its own observations only.  Uniforms
    are drawn up front (one stream per agent, one for the environment) so the
    compiled and interpreted loops consume randomness identically.
    """
    if horizon < 1:
        raise ValueError("phase length must be >= 1")
    arr = _arrays(game)
    n, ns, k = len(learners), game.num_states, arr.max_actions
    pol_cdf = np.ones((n, ns, k))
    q = np.zeros((n, ns, k))
    nq = np.zeros((n, ns, k), dtype=np.int64)
    j = np.zeros((n, ns))
    nj = np.zeros((n, ns), dtype=np.int64)
    alpha = np.empty((n, horizon + 1))
    agent_u = np.empty((n, horizon))
    for i, ln in enumerate(learners):
        na = game.num_actions[i]
        rho = ln.params.rho
        pol_cdf[i, :, :na] = np.cumsum((1.0 - rho) * ln.policy + rho / na, axis=1)
        q[i, :, :na] = ln.q.values
        nq[i, :, :na] = ln.q.counts
        j[i] = ln.j.values
        nj[i] = ln.j.counts
        alpha[i] = ln.params.step_size.table(horizon + 1)
        agent_u[i] = ln.rng.random(horizon)
    env_u = env_rng.random(horizon)
    counts = np.zeros((n, k), dtype=np.int64)

    use_jit = USE_JIT if jit is None else (jit and _phase_loop_jit is not None)
    loop, step = (_phase_loop_jit, _learner_step_jit) if use_jit else (_phase_loop, _learner_step)
    x_end = loop(int(x), env_u, agent_u, pol_cdf, arr.num_actions, arr.cost, arr.kernel_cdf,
                 arr.betas, alpha, q, nq, j, nj, counts, step)

    for i, ln in enumerate(learners):
        na = game.num_actions[i]
        ln.q.values[:] = q[i, :, :na]
        ln.q.counts[:] = nq[i, :, :na]
        ln.j.values[:] = j[i]
        ln.j.counts[:] = nj[i]
    return PhaseStats(horizon, int(x_end), counts)


def end_of_phase_update(learners: Sequence[LearnerState]) -> tuple[bool, ...]:
    """Synchronous baseline update: every agent tests satisfaction on its own tables,
    revises its baseline, then resets its estimates.  Returns the satisfaction flags."""
    satisfied = tuple(ln.is_satisfied() for ln in learners)
    new_ids = [ln.revise(s) for ln, s in zip(learners, satisfied)]
    for ln, pid in zip(learners, new_ids):
        ln.policy_id = pid
        reset_estimates(ln)
    return satisfied


# --------------------------------------------------------------------------
# configuration and trials


@dataclass
class ExperimentConfig:
    game: Optional[str] = None  # builtin name or JSON path; used by the CLI
    grid_m: int = 10
    eps: float = 0.2
    num_phases: int = 400
    phase_length: Union[int, list] = 2000
    num_trials: int = 20
    master_seed: int = 0
    learner: LearnerParams = field(default_factory=LearnerParams)
    per_player: Optional[list] = None  # list[LearnerParams] overriding `learner`
    eval_stride: int = 1
    initial_policy: Union[str, list] = "random"
    auto_delta: bool = False
    tol: float = DEFAULT_TOL
    track_q_error: bool = False

    def __post_init__(self):
        if self.grid_m < 1:
            raise RangeError("grid_m")
        if self.eps < 0:
            raise RangeError("eps")
        if self.num_phases < 0:
            raise RangeError("num_phases")
        if self.num_trials < 1:
            raise RangeError("num_trials")
        if self.eval_stride < 1:
            raise RangeError("eval_stride")
        if isinstance(self.phase_length, (list, tuple)):
            if len(self.phase_length) < self.num_phases or any(t < 1 for t in self.phase_length):
                raise RangeError("phase_length")
        elif int(self.phase_length) < 1:
            raise RangeError("phase_length")

    def phase_len(self, k: int) -> int:
        if isinstance(self.phase_length, (list, tuple)):
            return int(self.phase_length[k])
        return int(self.phase_length)

    def phase_starts(self) -> list[int]:
        """``t_0 = 0`` and ``t_{k+1} = t_k + T_k``."""
        starts = [0]
        for k in range(self.num_phases):
            starts.append(starts[-1] + self.phase_len(k))
        return starts

    def params_for(self, i: int) -> LearnerParams:
        if self.per_player is not None:
            return self.per_player[i]
        return self.learner


@dataclass
class PhaseLog:
    phase: int
    policy_ids: tuple  # baseline joint policy used during the phase
    satisfied: tuple  # per-agent flags from the end-of-phase test
    is_eq: Optional[bool] = None  # offline exact check of policy_ids
    q_error: Optional[tuple] = None  # per-agent ||Q - Q*_{perturbed others}||


@dataclass
class TrialResult:
    trial: int
    logs: list
    final_policy: tuple
    seed: tuple  # (master entropy, spawn key) of the trial's seed sequence

    def eq_flags(self) -> list:
        return [lg.is_eq for lg in self.logs]


def game_grids(game: Game, m: int) -> list:
    """One grid per player; players with equal action counts share the same object."""
    made = {}
    for na in game.num_actions:
        if na not in made:
            made[na] = build_quantized_set(na, game.num_states, m)
    return [made[na] for na in game.num_actions]


def resolve_delta(game: Game, config: ExperimentConfig, grid,
                  oracle: Optional[GridOracle] = None) -> ExperimentConfig:
    """Fill ``delta = bar_delta / 2`` when ``auto_delta`` is set."""
    if not config.auto_delta:
        return config
    bd = compute_bar_delta(game, grid, config.eps, config.tol, oracle=oracle)
    delta = bd.value / 2.0
    log.info("bar delta %.6g, using delta = %.6g", bd.value, delta)
    learner = replace(config.learner, delta=delta)
    per_player = None
    if config.per_player is not None:
        per_player = [replace(p, delta=delta) for p in config.per_player]
    return replace(config, learner=learner, per_player=per_player, auto_delta=False)


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def child_seeds(seq: np.random.SeedSequence, count: int) -> list:
    """Children ``0..count-1`` of ``seq``.  Unlike ``spawn`` this does not advance
    ``seq``'s child counter, so the same trial seed always yields the same streams."""
    return [
        np.random.SeedSequence(seq.entropy, spawn_key=tuple(seq.spawn_key) + (k,),
                               pool_size=seq.pool_size)
        for k in range(count)
    ]


def make_rng(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seq))


def trial_seeds(master_seed: int, num_trials: int) -> list:
    return child_seeds(np.random.SeedSequence(master_seed), num_trials)


def _q_errors(game, learners, ids, oracle):
    out = []
    joint = oracle.joint(ids)
    rho = [ln.params.rho for ln in learners]
    hat = perturb_joint(joint, rho)
    for i, ln in enumerate(learners):
        q_star = solve_q_star(induce_mdp(game, i, hat), oracle.tol)
        out.append(float(np.max(np.abs(ln.q.values - q_star))))
    return tuple(out)


def run_trial(game: Game, config: ExperimentConfig, trial_seed, trial: int = 0,
              oracle: Optional[GridOracle] = None, jit: Optional[bool] = None) -> TrialResult:
    """One run of the two-timescale learner for ``config.num_phases`` phases."""
    if config.auto_delta:
        raise ValueError("resolve auto_delta before running trials")
    seq = _seed_sequence(trial_seed)
    env_seq, *agent_seqs = child_seeds(seq, game.num_players + 1)
    env_rng = make_rng(env_seq)
    grids = oracle.grids if oracle is not None else game_grids(game, config.grid_m)
    oracle = oracle or GridOracle(game, grids, config.tol)

    learners = []
    for i in range(game.num_players):
        rng = make_rng(agent_seqs[i])
        if config.initial_policy == "random":
            pid = grids[i].random_id(rng)
        else:
            pid = int(config.initial_policy[i])
        params = replace(config.params_for(i), eps=config.eps)
        learners.append(LearnerState.create(game, i, params, grids[i], pid, rng))

    x = sample_initial_state(env_rng, game)
    logs = []
    for k in range(config.num_phases):
        ids = tuple(ln.policy_id for ln in learners)
        stats = run_exploration_phase(game, learners, config.phase_len(k), x, env_rng, jit=jit)
        x = stats.final_state
        q_err = _q_errors(game, learners, ids, oracle) if config.track_q_error else None
        satisfied = end_of_phase_update(learners)
        is_eq = oracle.is_equilibrium_ids(ids, config.eps) if k % config.eval_stride == 0 else None
        logs.append(PhaseLog(k, ids, satisfied, is_eq, q_err))
    final = tuple(ln.policy_id for ln in learners)
    return TrialResult(trial, logs, final, (seq.entropy, tuple(seq.spawn_key)))


def _run_trial_job(args):
    game, config, seed, trial = args
    return run_trial(game, config, seed, trial)


def run_experiment(game: Game, config: ExperimentConfig, workers: Optional[int] = None) -> list:
    """All trials of ``config``; results are ordered by trial index whatever ``workers`` is."""
    if not check_symmetry(game):
        log.warning("game is not symmetric; convergence guarantees do not apply")
    grids = game_grids(game, config.grid_m)
    oracle = GridOracle(game, grids, config.tol)
    config = resolve_delta(game, config, grids, oracle)
    seeds = trial_seeds(config.master_seed, config.num_trials)
    if workers is None:
        workers = int(os.environ.get("SYMGA_THREADS", "1") or 1)
    workers = max(1, min(workers, config.num_trials))
    if workers == 1:
        return [run_trial(game, config, s, t, oracle=oracle) for t, s in enumerate(seeds)]
    jobs = [(game, config, s, t) for t, s in enumerate(seeds)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_trial_job, jobs))


# --------------------------------------------------------------------------
# statistics


@dataclass
class FrequencyCurve:
    phases: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    num_trials: int


def aggregate_trials(results) -> FrequencyCurve:
    """Fraction of trials whose baseline is an equilibrium, per evaluated phase.

    ``results`` is a list of :class:`TrialResult` or of per-trial flag sequences.
    """
    flags = [r.eq_flags() if isinstance(r, TrialResult) else list(r) for r in results]
    if not flags:
        raise ShapeMismatch("no trials to aggregate")
    length = len(flags[0])
    if any(len(f) != length for f in flags):
        raise ShapeMismatch("trials have different numbers of phases")
    phases, means = [], []
    for k in range(length):
        column = [f[k] for f in flags]
        if all(v is None for v in column):
            continue
        if any(v is None for v in column):
            raise ShapeMismatch(f"phase {k} is evaluated in some trials only")
        phases.append(k)
        means.append(float(np.mean(np.asarray(column, dtype=float))))
    means = np.array(means)
    n = len(flags)
    stderr = np.sqrt(means * (1.0 - means) / n)
    return FrequencyCurve(np.array(phases, dtype=np.int64), means, stderr, n)


# --------------------------------------------------------------------------
# oracle revision process


def oracle_revision_step(rng, ids, oracle: GridOracle, eps: float, e, eta, objective="min",
                         certify: bool = False) -> tuple:
    """One synchronous step of the exact-information revision chain."""
    n = len(ids)
    e = np.broadcast_to(np.asarray(e, dtype=float), (n,))
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n,))
    joint = oracle.joint(ids)
    satisfied = oracle.satisfaction(joint, eps, certify)
    new = []
    for i, pid in enumerate(ids):
        if satisfied[i]:
            new.append(pid)
        elif rng.random() < e[i]:
            new.append(oracle.grids[i].random_id(rng))
        else:
            q = oracle.q_star(i, joint)
            new.append(independent_update_rule_id(pid, q, eta[i], oracle.grids[i], objective,
                                                  tie_tol=2 * oracle.tol))
    return tuple(new)


def run_oracle_process(game: Game, grid, e, eta, steps: int, rng: np.random.Generator,
                       eps: float, start=None, tol: float = DEFAULT_TOL, objective="min",
                       oracle: Optional[GridOracle] = None, certify: bool = False,
                       stop_at_eq: bool = False) -> list:
    """Trajectory ``[pi_0, ..., pi_steps]`` of joint grid ids under exact satisfaction tests
    and exact Q-factors.  ``start`` defaults to a uniform draw from the joint grid.

    With ``stop_at_eq`` the trajectory ends at its first eps-equilibrium, which is
    absorbing, so the rest of the path would repeat it.
    """
    oracle = oracle or GridOracle(game, grid, tol)
    if start is None:
        start = tuple(g.random_id(rng) for g in oracle.grids)
    path = [tuple(int(s) for s in start)]
    for _ in range(steps):
        if stop_at_eq and oracle.is_equilibrium_ids(path[-1], eps, certify):
            break
        path.append(oracle_revision_step(rng, path[-1], oracle, eps, e, eta, objective, certify))
    return path


def oracle_transition_row(oracle: GridOracle, ids, eps: float, e, eta, objective="min") -> dict:
    """Exact next-step distribution of the oracle chain from ``ids`` as ``{joint ids: prob}``."""
    n = len(ids)
    e = np.broadcast_to(np.asarray(e, dtype=float), (n,))
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n,))
    joint = oracle.joint(ids)
    satisfied = oracle.satisfaction(joint, eps)
    marginals = []
    for i, pid in enumerate(ids):
        if satisfied[i]:
            marginals.append({pid: 1.0})
            continue
        grid = oracle.grids[i]
        dist = {p: e[i] / grid.num_policies for p in range(grid.num_policies)}
        target = independent_update_rule_id(pid, oracle.q_star(i, joint), eta[i], grid, objective,
                                            tie_tol=2 * oracle.tol)
        dist[target] = dist.get(target, 0.0) + 1.0 - e[i]
        marginals.append(dist)
    row = {(): 1.0}
    for dist in marginals:
        row = {k + (p,): w * q for k, w in row.items() for p, q in dist.items()}
    return row


def recursion_oracle(u: float, p: float, y0: float, k: int) -> float:
    """Iterate ``y <- u*y + p*(1-y)`` ``k`` times; the limit is ``p / (1 - u + p)``."""
    if not 0.0 < p < u < 1.0:
        raise ValueError("need 0 < p < u < 1")
    if not 0.0 <= y0 <= 1.0:
        raise ValueError("need y0 in [0, 1]")
    y = float(y0)
    for _ in range(int(k)):
        y = u * y + p * (1.0 - y)
    return y


def recursion_limit(u: float, p: float) -> float:
    return p / (1.0 - u + p)


__all__ = [
    "ExperimentConfig", "FrequencyCurve", "PhaseLog", "PhaseStats", "TrialResult",
    "aggregate_trials", "end_of_phase_update", "game_grids", "make_rng",
    "oracle_revision_step", "oracle_transition_row", "recursion_limit", "recursion_oracle",
    "resolve_delta", "run_experiment", "run_exploration_phase", "run_oracle_process",
    "run_trial", "trial_seeds",
]
