"""Command-line interface.

Settings come from three layers: built-in defaults, an optional YAML run
file (``--config``) whose keys are the long flag names with underscores, and
explicit flags, which take precedence over the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

import numpy as np
import yaml

from bacvar import evaluation, mcts, oracles, pg, vi
from bacvar.belief import Belief
from bacvar.config import load_domain

RUN_KEYS = ("domain", "method", "alpha", "episodes", "seed", "workers", "out", "grid_points")
SEARCH_KEYS = ("c_mcts", "c_bo", "tau", "sims_initial", "sims_step", "expansion_mode", "num_candidates")
PG_KEYS = {"pg_sims": "total_sims", "learning_rate": "learning_rate", "minibatch_size": "minibatch_size",
           "eval_every": "eval_every", "eval_episodes": "eval_episodes"}


class CliError(Exception):
    pass


class JsonArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run file; explicit flags override its entries")
    p.add_argument("--domain", help="built-in name (betting, navigation) or domain YAML path")
    p.add_argument("--method", choices=evaluation.METHODS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory for metrics.csv, returns and results.json")
    p.add_argument("--grid-points", type=int)
    g = p.add_argument_group("planner")
    g.add_argument("--c-mcts", type=float)
    g.add_argument("--c-bo", type=float)
    g.add_argument("--tau", type=float)
    g.add_argument("--sims-initial", type=int)
    g.add_argument("--sims-step", type=int)
    g.add_argument("--expansion-mode", choices=(mcts.BAYESOPT, mcts.RANDOM))
    g.add_argument("--num-candidates", type=int)
    t = p.add_argument_group("policy gradient")
    t.add_argument("--pg-sims", type=int)
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--minibatch-size", type=int)
    t.add_argument("--eval-every", type=int)
    t.add_argument("--eval-episodes", type=int)


def merged_settings(args: argparse.Namespace) -> dict:
    """Config-file entries overlaid by explicit flags."""
    settings = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as err:
            raise CliError(f"cannot read run config {args.config!r}: {err}") from err
        if not isinstance(loaded, dict):
            raise CliError("run config must be a mapping")
        settings.update({k.replace("-", "_"): v for k, v in loaded.items()})
    known = set(RUN_KEYS) | set(SEARCH_KEYS) | set(PG_KEYS)
    unknown = set(settings) - known
    if unknown:
        raise CliError(f"unknown run config keys: {', '.join(sorted(unknown))}")
    for k in known:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def run_config(settings: dict) -> evaluation.RunConfig:
    search = mcts.SearchConfig(**{k: settings[k] for k in SEARCH_KEYS if k in settings})
    pgs = evaluation.PgSettings(**{v: settings[k] for k, v in PG_KEYS.items() if k in settings})
    kw = {k: settings[k] for k in RUN_KEYS if k in settings}
    return evaluation.RunConfig(search=search, pg=pgs, **kw)


def cmd_evaluate(args) -> dict:
    cfg = run_config(merged_settings(args))
    res = evaluation.run_evaluation(cfg)
    return {"metrics": asdict(res.metrics), "monotone": res.metrics.monotone(), "out": cfg.out}


def cmd_ablation(args) -> dict:
    settings = merged_settings(args)
    settings.setdefault("method", "rabamcp")
    cfg = run_config(settings)
    bo, rnd = evaluation.ablation_random_expansion(cfg)
    test = evaluation.paired_cvar_test(bo.returns, rnd.returns, cfg.alpha)
    return {"bayesopt": asdict(bo.metrics), "random": asdict(rnd.metrics), "paired_test": test, "out": cfg.out}


def cmd_vi_solve(args) -> dict:
    domain = load_domain(args.domain)
    grid = vi.make_grid(args.alpha, args.grid_points)
    if args.model == "bamdp":
        table = vi.solve_bamdp(domain, args.alpha, grid, max_states=args.max_states)
        key = (domain.initial_state, Belief.from_prior(domain).key)
    else:
        table = vi.solve_mdp(Belief.from_prior(domain).expected_mdp(), args.alpha, grid)
        key = domain.initial_state
    if args.out:
        table.save(args.out)
    a, _ = table.act(0, key, args.alpha)
    return {"model": args.model, "alpha": args.alpha, "root_value": table.value(0, key, args.alpha),
            "root_action": domain.action_labels[a] if domain.action_labels else a,
            "nodes": len(table.values), "out": args.out}


def cmd_pg_train(args) -> dict:
    domain = load_domain(args.domain)
    params = pg.init_from_vi(domain, args.alpha, args.particles, learning_rate=args.learning_rate,
                             minibatch_size=args.minibatch_size)
    params, curve, models = pg.train(domain, args.alpha, params, args.sims, np.random.default_rng(args.seed),
                                     eval_every=args.eval_every, eval_episodes=args.eval_episodes,
                                     num_particles=args.particles, curve_path=args.curve)
    if args.out:
        np.savez(args.out, W=params.W, models=models)
    final = pg.evaluate(domain, params, models, args.alpha, np.random.default_rng([args.seed, 1]),
                        args.eval_episodes)
    return {"alpha": args.alpha, "sims": args.sims, "final_cvar": final[0], "final_cvar_se": final[1],
            "curve_points": len(curve.sims), "out": args.out, "curve": args.curve}


def cmd_oracle(args) -> dict:
    rows = [oracles.micro_check(a, args.game_grid, args.prior_grid) for a in args.alpha]
    ok = all(r["max_abs_gap"] <= args.tolerance for r in rows)
    return {"ok": ok, "tolerance": args.tolerance, "checks": rows}


def build_parser() -> argparse.ArgumentParser:
    parser = JsonArgumentParser(prog="bacvar", description="Risk-averse Bayes-adaptive planning experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=JsonArgumentParser)

    p = sub.add_parser("evaluate", help="run one method for a number of episodes")
    _run_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablation", help="Bayesian-optimisation versus random adversary expansions")
    _run_flags(p)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("vi-solve", help="CVaR value iteration on the expected MDP or the Bayes-adaptive MDP")
    p.add_argument("--domain", default="betting")
    p.add_argument("--alpha", type=float, default=0.03)
    p.add_argument("--model", choices=("emdp", "bamdp"), default="bamdp")
    p.add_argument("--grid-points", type=int, default=vi.DEFAULT_GRID_POINTS)
    p.add_argument("--max-states", type=int, default=evaluation.BAMDP_VI_STATE_CAP)
    p.add_argument("--out", help="write the value table as JSON")
    p.set_defaults(func=cmd_vi_solve)

    p = sub.add_parser("pg-train", help="train the CVaR policy-gradient baseline")
    p.add_argument("--domain", default="betting")
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--sims", type=int, default=2_000_000)
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--minibatch-size", type=int, default=1000)
    p.add_argument("--particles", type=int, default=pg.NUM_PARTICLES)
    p.add_argument("--eval-every", type=int, default=20_000)
    p.add_argument("--eval-episodes", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curve", help="training curve CSV path")
    p.add_argument("--out", help="write weights and particle models (.npz)")
    p.set_defaults(func=cmd_pg_train)

    p = sub.add_parser("oracle", help="brute-force checks on the two-state micro-instance")
    p.add_argument("--alpha", type=float, nargs="+", default=[0.25, 0.05, 0.5, 1.0])
    p.add_argument("--game-grid", type=int, default=801)
    p.add_argument("--prior-grid", type=int, default=201)
    p.add_argument("--tolerance", type=float, default=1e-2)
    p.set_defaults(func=cmd_oracle)
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    json.dump({"error": kind, "message": message}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as err:
        return _fail("usage", str(err), 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except CliError as err:
        return _fail("usage", str(err), 2)
    except Exception as err:  # reported as JSON for scripted callers
        return _fail(type(err).__name__, str(err), 1)
    json.dump(result, sys.stdout, indent=2, default=float)
    sys.stdout.write("\n")
    if args.command == "oracle" and not result["ok"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
