"""``symga`` command line.  Exit codes: 0 success, 1 domain error, 2 usage error."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import SymgaError
from .game import Game, check_symmetry, load_game
from .games import BUILTIN_GAMES
from .io import (
    config_from_dict,
    dump_config,
    fmt,
    load_config,
    read_run_csv,
    write_freq_csv,
    write_run_csv,
)
from .orchestrator import (
    aggregate_trials,
    game_grids,
    make_rng,
    recursion_oracle,
    resolve_delta,
    run_experiment,
    run_oracle_process,
    trial_seeds,
)
from .paths import construct_symmetric_path, has_revision_paths_property, is_valid_revision_path
from .solver import (
    DEFAULT_TOL,
    GridOracle,
    compute_bar_delta,
    find_quantized_equilibria,
    find_rho_threshold,
)


class UsageError(Exception):
    pass


def resolve_game(ref: str) -> Game:
    """A JSON path if it exists, otherwise a builtin name (``rps``, or ``rps.json``)."""
    path = Path(ref)
    if path.exists():
        return load_game(path)
    name = path.stem if path.suffix == ".json" else ref
    if name in BUILTIN_GAMES:
        return BUILTIN_GAMES[name]()
    raise UsageError(f"no game file or builtin game named {ref!r}")


def _ids(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated policy ids, got {text!r}") from None


def _bool(v: bool) -> str:
    return "true" if v else "false"


def _oracle(args, game):
    grids = game_grids(game, args.grid)
    return grids, GridOracle(game, grids, args.tol)


def _check_ids(ids, oracle):
    if len(ids) != oracle.game.num_players:
        raise UsageError(f"expected {oracle.game.num_players} policy ids, got {len(ids)}")
    for i, (pid, g) in enumerate(zip(ids, oracle.grids)):
        if not 0 <= pid < g.num_policies:
            raise UsageError(f"policy id {pid} of player {i} outside 0..{g.num_policies - 1}")


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(args):
    game = resolve_game(args.game)
    print(f"valid: {game.num_players} players, {game.num_states} states, actions {list(game.num_actions)}")


def cmd_check_symmetry(args):
    report = check_symmetry(resolve_game(args.game), args.tol)
    print(f"symmetric: {_bool(report.is_symmetric)}")
    if report.witness is not None:
        print(f"witness: {report.witness}")


def cmd_check_eq(args):
    game = resolve_game(args.game)
    grids, oracle = _oracle(args, game)
    ids = _ids(args.ids)
    _check_ids(ids, oracle)
    gaps = oracle.gaps_ids(ids)
    eq = oracle.is_equilibrium_ids(ids, args.eps, certify=args.certify)
    for i, g in enumerate(gaps):
        print(f"player {i} gaps: " + " ".join(fmt(v) for v in g))
    print(f"equilibrium: {_bool(eq)}")


def cmd_bar_delta(args):
    game = resolve_game(args.game)
    grids, oracle = _oracle(args, game)
    bd = compute_bar_delta(game, grids, args.eps, args.tol, oracle)
    print(f"bar_delta: {fmt(bd.value)}")
    if args.rho_check:
        delta = args.delta if args.delta is not None else bd.value / 2
        deltas = [delta] * game.num_players
        rho, halvings, check = find_rho_threshold(game, grids, deltas, bd.value, args.tol)
        print(f"delta: {fmt(delta)}")
        print(f"rho: {fmt(rho)} after {halvings} halvings, bounds passed: {_bool(check.passed)}")


def cmd_revision_path(args):
    game = resolve_game(args.game)
    grids, oracle = _oracle(args, game)
    start = _ids(args.start)
    _check_ids(start, oracle)
    if args.target is not None:
        target = _ids(args.target)
        _check_ids(target, oracle)
    else:
        eqs = find_quantized_equilibria(game, grids, args.eps, args.tol, oracle)
        target = eqs[0] if eqs else None
    path = construct_symmetric_path(game, grids, start, args.eps, target, args.tol, oracle)
    report = is_valid_revision_path(game, path, args.tol, oracle=oracle)
    for k, (ids, cert) in enumerate(zip(path.ids, path.certificates)):
        print(f"step {k}: ids {','.join(map(str, ids))} satisfied {','.join(_bool(c) for c in cert)}")
    print(f"length: {len(path)}")
    print(f"valid: {_bool(report.valid)}, terminal equilibrium: {_bool(report.terminal_is_eq)}")
    if args.out:
        Path(args.out).write_text(path.to_json() + "\n")


def cmd_verify_paths(args):
    game = resolve_game(args.game)
    grids, oracle = _oracle(args, game)
    rep = has_revision_paths_property(game, grids, args.eps, args.tol, oracle=oracle)
    print(f"holds: {_bool(rep.holds)}")
    print(f"starts: {rep.num_starts}, max length: {rep.max_length}, failures: {len(rep.failures)}")


def cmd_oracle_sim(args):
    game = resolve_game(args.game)
    grids, oracle = _oracle(args, game)
    absorbed, departures = 0, 0
    hits = []
    for seq in trial_seeds(args.seed, args.runs):
        path = run_oracle_process(game, grids, args.e, args.eta, args.steps, make_rng(seq),
                                  args.eps, tol=args.tol, oracle=oracle)
        flags = [oracle.is_equilibrium_ids(p, args.eps) for p in path]
        if any(flags):
            first = flags.index(True)
            hits.append(first)
            departures += sum(not f for f in flags[first:])
        absorbed += flags[-1]
    print(f"absorbed: {fmt(absorbed / args.runs)} ({absorbed}/{args.runs}) by step {args.steps}")
    print(f"post-absorption departures: {departures}")
    if hits:
        print(f"mean first hitting step: {fmt(np.mean(hits))}")


_SIM_FLAGS = {
    "game": "game", "grid": "grid", "eps": "eps", "phases": "phases", "phase_len": "phase_len",
    "trials": "trials", "seed": "seed", "rho": "rho", "e": "e", "eta": "eta", "delta": "delta",
    "eval_stride": "eval_stride", "tol": "tol",
}


def cmd_simulate(args):
    if args.seed is None and not (args.config and "seed" in json.loads(Path(args.config).read_text())):
        raise UsageError("simulate is randomized and needs --seed (or a seed in --config)")
    overrides = {key: getattr(args, attr) for key, attr in _SIM_FLAGS.items()}
    if args.auto_delta:
        overrides["auto_delta"] = True
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = config_from_dict({k: v for k, v in overrides.items() if v is not None})
    if cfg.game is None:
        raise UsageError("simulate needs --game (or a game in --config)")
    game = resolve_game(cfg.game)
    grids = game_grids(game, cfg.grid_m)
    cfg = resolve_delta(game, cfg, grids)
    out = Path(args.out)
    freq = Path(args.freq_out) if args.freq_out else out.with_name("freq.csv")
    dump_config(cfg, out.with_suffix(".config.json"))
    results = run_experiment(game, cfg, workers=args.workers)
    write_run_csv(results, out)
    curve = aggregate_trials(results)
    write_freq_csv(curve, freq)
    if len(curve.mean):
        print(f"final frequency: {fmt(curve.mean[-1])}")
    print(f"wrote {out} and {freq}")


def cmd_aggregate(args):
    flags = read_run_csv(args.run)
    curve = aggregate_trials(list(flags.values()))
    write_freq_csv(curve, args.out)
    print(f"wrote {args.out} ({len(curve.phases)} phases, {curve.num_trials} trials)")


def cmd_recursion_check(args):
    y = recursion_oracle(args.u, args.p, args.y0, args.k)
    print(format(y, ".12g"))


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symga", description="Independent learners in symmetric stochastic games.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(fn=fn, subparser=p)
        return p

    def game(p):
        p.add_argument("--game", required=True, help="game JSON file or builtin name")
        p.add_argument("--tol", type=float, default=DEFAULT_TOL)

    def grid_eps(p):
        p.add_argument("--grid", type=int, required=True, help="grid resolution m")
        p.add_argument("--eps", type=float, required=True)

    p = add("validate", cmd_validate, "validate a game file")
    p.add_argument("--game", required=True)

    p = add("check-symmetry", cmd_check_symmetry, "test invariance under player permutations")
    p.add_argument("--game", required=True)
    p.add_argument("--tol", type=float, default=1e-9)

    p = add("check-eq", cmd_check_eq, "exact eps-equilibrium test of a joint grid policy")
    game(p)
    grid_eps(p)
    p.add_argument("--ids", required=True, help="comma-separated grid policy ids, one per player")
    p.add_argument("--certify", action="store_true", help="refuse margins within solver slack")

    p = add("bar-delta", cmd_bar_delta, "smallest positive |eps - suboptimality| over the grid")
    game(p)
    grid_eps(p)
    p.add_argument("--rho-check", action="store_true", help="also halve rho until the bounds hold")
    p.add_argument("--delta", type=float, default=None)

    p = add("revision-path", cmd_revision_path, "construct and validate a revision path")
    game(p)
    grid_eps(p)
    p.add_argument("--start", required=True, help="comma-separated start ids")
    p.add_argument("--target", default=None, help="target equilibrium ids (default: first found)")
    p.add_argument("--out", default=None, help="write the path as JSON")

    p = add("verify-paths", cmd_verify_paths, "check the revision-path property from every grid start")
    game(p)
    grid_eps(p)

    p = add("oracle-sim", cmd_oracle_sim, "simulate the exact-information revision chain")
    game(p)
    grid_eps(p)
    p.add_argument("--e", type=float, default=0.1)
    p.add_argument("--eta", type=float, default=0.2)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)

    p = add("simulate", cmd_simulate, "run independent learners and write run.csv and freq.csv")
    p.add_argument("--config", default=None, help="JSON config; flags override its values")
    p.add_argument("--game", default=None)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--phases", type=int, default=None)
    p.add_argument("--phase-len", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--e", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--auto-delta", action="store_true", help="use delta = bar_delta / 2")
    p.add_argument("--eval-stride", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--workers", type=int, default=None, help="default: $SYMGA_THREADS or 1")
    p.add_argument("--out", required=True)
    p.add_argument("--freq-out", default=None, help="default: freq.csv next to --out")

    p = add("aggregate", cmd_aggregate, "equilibrium frequency curve from a run.csv")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)

    p = add("recursion-check", cmd_recursion_check, "iterate y <- u*y + p*(1-y)")
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--y0", type=float, default=0.0)
    p.add_argument("--k", type=int, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except UsageError as exc:
        print(f"symga {args.command}: error: {exc}", file=sys.stderr)
        args.subparser.print_usage(sys.stderr)
        return 2
    except (SymgaError, ValueError, OSError) as exc:
        print(f"symga {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
