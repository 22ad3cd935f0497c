"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, which the terminal summary prints
under "acceptance criteria".  Criteria 1 and 2 fail by design: the
thresholds are not reachable for the configured instances (see README).
"""
import json
import time
from math import comb

import numpy as np
import pytest

from conftest import record
from symga.cli import main
from symga.games import random_game, random_symmetric_game, rock_paper_scissors
from symga.learners import LearnerParams, LearnerState, default_box
from symga.orchestrator import (
    ExperimentConfig,
    aggregate_trials,
    child_seeds,
    game_grids,
    make_rng,
    recursion_limit,
    recursion_oracle,
    resolve_delta,
    run_experiment,
    run_exploration_phase,
    run_oracle_process,
    trial_seeds,
)
from symga.paths import has_revision_paths_property
from symga.policy import build_quantized_set, uniform_policy
from symga.solver import (
    GridOracle,
    bellman_residual,
    compute_bar_delta,
    evaluate_policy,
    find_rho_threshold,
    induce_mdp,
    is_eps_equilibrium,
    solve_q_star,
)

pytestmark = pytest.mark.acceptance


def test_criterion_1_rps_desk_run():
    game = rock_paper_scissors()
    cfg = ExperimentConfig(grid_m=10, eps=0.2, num_phases=400, phase_length=2000, num_trials=20,
                           master_seed=7, learner=LearnerParams(rho=0.05, e=0.1, eta=0.2),
                           auto_delta=True)
    cfg = resolve_delta(game, cfg, game_grids(game, 10))
    start = time.perf_counter()
    curve = aggregate_trials(run_experiment(game, cfg))
    last50 = float(curve.mean[-50:].mean())
    q = len(curve.mean) // 5
    first, final = float(curve.mean[:q].mean()), float(curve.mean[-q:].mean())
    ok = last50 >= 0.8 and final > first
    record("criterion 1", ok,
           f"last-50 mean {last50:.3f} (need >= 0.8), quintiles {first:.3f} -> {final:.3f} "
           f"[{time.perf_counter() - start:.0f}s]")
    assert final > first, "equilibrium frequency shows no upward trend"
    assert last50 >= 0.8


def test_criterion_2_oracle_absorption():
    game = rock_paper_scissors()
    grid = game_grids(game, 4)
    oracle = GridOracle(game, grid)
    absorbed = departures = 0
    for seq in trial_seeds(2, 500):
        path = run_oracle_process(game, grid, 0.3, 0.2, 300, make_rng(seq), 0.2, oracle=oracle)
        flags = [oracle.is_equilibrium_ids(p, 0.2) for p in path]
        if any(flags):
            departures += sum(not f for f in flags[flags.index(True):])
        absorbed += flags[-1]
    frac = absorbed / 500
    record("criterion 2", frac >= 0.99 and departures == 0,
           f"absorbed {frac:.3f} (need >= 0.99), departures {departures}")
    assert departures == 0
    assert frac >= 0.99


CAP = 2000  # joint grid size above which a full sweep of starts is out of reach


def _sample_dims(rng):
    while True:
        n, x, u, m = (int(rng.integers(2, 5)), int(rng.integers(1, 4)),
                      int(rng.integers(2, 4)), int(rng.integers(1, 3)))
        if comb(m + u - 1, u - 1) ** (x * n) <= CAP:
            return n, x, u, m


def _pick_eps(rng, oracle):
    """Midpoint between consecutive distinct gap values, at or above the least exploitability."""
    gaps = np.array([oracle.gaps_ids(ids).max(axis=1) for ids in oracle.all_joint_ids()])
    expl = gaps.max(axis=1)
    vals = np.unique(np.round(gaps.ravel(), 9))
    vals = vals[vals >= expl.min() - 1e-9]
    vals = vals[vals <= max(np.median(expl), vals[min(1, len(vals) - 1)])]
    if len(vals) < 2:
        return float(expl.min()) + 0.05
    k = int(rng.integers(len(vals) - 1))
    return 0.5 * (vals[k] + vals[k + 1])


def test_criterion_3_constructor_on_random_symmetric_games():
    rng = np.random.default_rng(2024)
    failures = longest_excess = starts = 0
    for _ in range(200):
        n, x, u, m = _sample_dims(rng)
        game = random_symmetric_game(rng, n, x, u, discount=0.5)
        grid = game_grids(game, m)
        oracle = GridOracle(game, grid)
        report = has_revision_paths_property(game, grid, _pick_eps(rng, oracle), oracle=oracle)
        failures += len(report.failures)
        starts += report.num_starts
        longest_excess = max(longest_excess, report.max_length - (n + 1))
    ok = failures == 0 and longest_excess <= 0
    record("criterion 3", ok, f"200 games, {starts} starts, {failures} failures, "
           f"max length - (N+1) = {longest_excess}")
    assert ok


@pytest.fixture(scope="module")
def learning_runs():
    """40 seeds x 5 initial conditions of 2e5 stages on a fixed random MDP."""
    game = random_game(np.random.default_rng(11), 1, 4, 3, discount=0.5, min_prob=0.05)
    pi = uniform_policy(4, 3)
    grid = build_quantized_set(3, 4, 3)
    q_star = solve_q_star(induce_mdp(game, 0, (pi,)), 1e-10)
    j_star = evaluate_policy(game, (pi,), 0, tol=1e-10)
    lo, hi = default_box(game, 0)
    q_err, j_err = [], []
    for seq in trial_seeds(45, 40):
        init_seq, *run_seqs = child_seeds(seq, 6)
        r0 = make_rng(init_seq)
        inits = [np.zeros(12), np.full(12, hi), np.full(12, lo), r0.uniform(lo, hi, 12), r0.uniform(lo, hi, 12)]
        for q0, rs in zip(inits, run_seqs):
            agent_seq, env_seq = child_seeds(rs, 2)
            ln = LearnerState.create(game, 0, LearnerParams(delta=0.01), grid, grid.policy_id(pi),
                                     make_rng(agent_seq))
            ln.q.values[:] = q0.reshape(4, 3)
            ln.j.values[:] = q0[:4]
            run_exploration_phase(game, [ln], 200_000, 0, make_rng(env_seq))
            q_err.append(np.abs(ln.q.values - q_star).max())
            j_err.append(np.abs(ln.j.values - j_star).max())
    return np.array(q_err), np.array(j_err)


def test_criterion_4_q_learning_accuracy(learning_runs):
    q_err = learning_runs[0]
    frac = float((q_err <= 0.05).mean())
    record("criterion 4", frac >= 0.95,
           f"{frac:.3f} of {q_err.size} runs within 0.05 (need >= 0.95), worst {q_err.max():.4f}")
    assert frac >= 0.95


def test_criterion_5_j_learning_accuracy(learning_runs):
    j_err = learning_runs[1]
    frac = float((j_err <= 0.05).mean())
    record("criterion 5", frac >= 0.95,
           f"{frac:.3f} of {j_err.size} runs within 0.05 (need >= 0.95), worst {j_err.max():.4f}")
    assert frac >= 0.95


def test_criterion_6_exact_solver_cross_checks():
    from symga.game import GameSpec, validate_game

    tol = 1e-10
    worst = 0.0
    rng = np.random.default_rng(6)
    for beta in (0.0, 0.5, 0.9):
        game = random_game(rng, 2, 3, 2, discount=beta)
        for _ in range(20):
            joint = tuple(rng.dirichlet(np.ones(2), size=3) for _ in range(2))
            for i in range(2):
                mdp = induce_mdp(game, i, joint)
                worst = max(worst, bellman_residual(mdp, solve_q_star(mdp, tol)))
    swap = validate_game(GameSpec(1, 2, [1], [0.5], np.array([[[1.0], [0.0]]]),
                                  np.array([[[0.0, 1.0]], [[1.0, 0.0]]]), np.array([0.5, 0.5])))
    q = solve_q_star(induce_mdp(swap, 0, (np.ones((2, 1)),)), tol)[:, 0]
    hand_err = float(np.abs(q - [4 / 3, 2 / 3]).max())
    rps = rock_paper_scissors()
    uniform = np.full((1, 3), 1 / 3)
    rock = np.array([[1.0, 0.0, 0.0]])
    uniform_eq = is_eps_equilibrium(rps, (uniform, uniform), 0.0, certify=True)
    rock_eq = is_eps_equilibrium(rps, (rock, rock), 0.2, certify=True)
    ok = worst <= tol and hand_err <= 1e-9 and uniform_eq and not rock_eq
    record("criterion 6", ok, f"max Bellman residual {worst:.1e}, 2-state error {hand_err:.1e}, "
           f"uniform 0-eq {uniform_eq}, Rock-vs-Rock 0.2-eq {rock_eq}")
    assert ok


def test_criterion_7_perturbation_constants():
    game = rock_paper_scissors()
    grid = game_grids(game, 10)
    coarse = compute_bar_delta(game, grid, 0.2, 1e-8).value
    fine = compute_bar_delta(game, grid, 0.2, 1e-10).value
    rel = abs(coarse - fine) / fine
    rho, halvings, check = find_rho_threshold(game, grid, [fine / 2] * 2, fine, 1e-10)
    ok = fine > 0 and rel <= 1e-4 and check.passed and halvings <= 20
    record("criterion 7", ok, f"bar delta {fine:.6g} (relative change {rel:.1e}), "
           f"rho {rho:.3g} after {halvings} halvings")
    assert ok


def test_criterion_8_recursion_limit():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(10):
        u = float(rng.uniform(0.05, 0.99))
        p = float(rng.uniform(0.01, u))
        y0 = float(rng.uniform(0, 1))
        worst = max(worst, abs(recursion_oracle(u, p, y0, 5000) - p / (1 - u + p)))
        assert recursion_limit(u, p) == pytest.approx(p / (1 - u + p), abs=1e-15)
    record("criterion 8", worst <= 1e-10, f"max error {worst:.1e} over 10 (u, p, y0) points")
    assert worst <= 1e-10


def test_criterion_9_byte_determinism(tmp_path, capsys):
    argv = ["simulate", "--game", "rps", "--grid", "10", "--eps", "0.2", "--phases", "40",
            "--phase-len", "2000", "--trials", "4", "--seed", "7", "--rho", "0.05", "--e", "0.1",
            "--eta", "0.2", "--auto-delta"]
    blobs = []
    for name in ("first", "second"):
        d = tmp_path / name
        d.mkdir()
        assert main(argv + ["--out", str(d / "run.csv")]) == 0
        blobs.append([(d / f).read_bytes() for f in ("run.csv", "freq.csv", "run.config.json")])
    capsys.readouterr()
    same = blobs[0] == blobs[1]
    assert json.loads(blobs[0][2])["seed"] == 7
    record("criterion 9", same, f"run.csv {len(blobs[0][0])} bytes, freq.csv {len(blobs[0][1])} bytes, "
           f"{'identical' if same else 'different'} across two runs")
    assert same
