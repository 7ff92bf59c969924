"""Command-line entry point: ``minimax-bayes <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .bandits import regret_surface, worst_case_prior, write_surface_csv
from .cutting_plane import cutting_plane_run, minimax_mixture
from .experiments import (GdaDirichletConfig, benchmark_pair, small_pair, random_task, run_compare16,
                          run_gda_dirichlet, run_three_mdp_grid, run_two_mdp_curve, write_manifest,
                          write_rows)
from .gda import GdaConfig, gda_run
from .mdp import load_mdps, save_mdps
from .policy import SoftmaxPartitionPolicy
from .regret import task_lattice

DEFAULTS = {
    "gen-mdps": {"n_mdps": 2, "n_states": 3, "n_actions": 2, "horizon": 5, "discount": 1.0},
    "two-mdp-curve": {"mdps": None, "n_grid": 101, "cut_iterations": 30, "psrl_episode_length": 1,
                      "psrl_mc": 2000, "psrl_update": False},
    "three-mdp-grid": {"mdps": None, "resolution": 0.05, "n_states": 3, "horizon": 5},
    "compare16": {"seeds": [0, 1, 2, 3, 4], "n_mdps": 16, "n_states": 3, "horizon": 4,
                  "discount": 0.9, "cut_iterations": 30},
    "gda": {"belief_kind": "finite", "mdps": None, "eta_policy": 3.0, "eta_belief": 0.3, "batch": 16,
            "iterations": 3000, "output": "mixture", "exact": True, "decay": 0.0,
            "dirichlet": {}},
    "cutplane": {"mdps": None, "iters": 30, "tol": 1e-4, "n_samples": 2000, "burn_in": 500, "thin": 5},
    "bandit-surface": {"fixed": [1.0, 1.0], "a2": [0.5, 1.0, 2.0, 4.0], "b2": [0.5, 1.0, 2.0, 4.0],
                       "gamma": 0.9, "horizon_trunc": 200, "n_mc": 10000, "n_max": 200},
    "bandit-worstcase": {"n_arms": 2, "gamma": 0.9, "a_grid": None, "horizon_trunc": 200,
                         "n_mc": 10000, "n_max": 200},
}


def load_config(kind: str, path: str | None, overrides: dict) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[kind]))
    if path:
        user = json.loads(Path(path).read_text())
        unknown = set(user) - set(cfg)
        if unknown:
            raise SystemExit(f"unknown config keys for {kind}: {sorted(unknown)}")
        cfg.update(user)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _mdps(cfg: dict, seed: int):
    return load_mdps(cfg["mdps"]) if cfg.get("mdps") else None


def cmd_gen_mdps(cfg, seed, out_dir, args):
    mdps = random_task(cfg["n_mdps"], seed, cfg["n_states"], cfg["n_actions"], cfg["horizon"],
                       cfg["discount"])
    out = out_dir / (args.out or "mdps.json")
    save_mdps(mdps, out)
    return [out]


def cmd_two_mdp_curve(cfg, seed, out_dir, args):
    mdps = _mdps(cfg, seed) or benchmark_pair()
    res = run_two_mdp_curve(mdps, cfg["n_grid"], seed, cfg["cut_iterations"], cfg["psrl_episode_length"],
                            cfg["psrl_mc"], cfg["psrl_update"])
    out = out_dir / (args.out or "two_mdp_curve.csv")
    write_rows(out, res.header, res.rows)
    return [out]


def cmd_three_mdp_grid(cfg, seed, out_dir, args):
    mdps = _mdps(cfg, seed) or random_task(3, seed, cfg["n_states"], 2, cfg["horizon"])
    header, rows = run_three_mdp_grid(mdps, cfg["resolution"])
    out = out_dir / (args.out or "three_mdp_grid.csv")
    write_rows(out, header, rows)
    return [out]


def cmd_compare16(cfg, seed, out_dir, args):
    rows = run_compare16(cfg["seeds"], cfg["n_mdps"], cfg["n_states"], cfg["horizon"], cfg["discount"],
                         cfg["cut_iterations"])
    out = out_dir / (args.out or "compare16.csv")
    write_rows(out, ["seed", "minimax_worst_regret", "uniform_worst_regret", "mixture_lp_value",
                     "n_best_responses"],
               [[r.seed, r.minimax, r.uniform, r.minimax_value_lp, r.n_responses] for r in rows])
    return [out]


def cmd_gda(cfg, seed, out_dir, args):
    if cfg["belief_kind"] == "dirichlet":
        dcfg = GdaDirichletConfig(**{**cfg["dirichlet"], "seed": seed})
        table = run_gda_dirichlet(dcfg)
        out = out_dir / (args.out or "gda_robustness.csv")
        write_rows(out, ["policy", "prior", "mean", "se", "median", "p999"], table.rows())
        trace = out_dir / "gda_trace.csv"
        table.traces["minimax"].write_csv(trace)
        return [out, trace]
    mdps = _mdps(cfg, seed) or small_pair()
    gcfg = GdaConfig(cfg["eta_policy"], cfg["eta_belief"], cfg["batch"], cfg["iterations"], seed,
                     "finite", cfg["exact"], cfg["output"], decay=cfg["decay"])
    start = np.full(len(mdps), 1.0 / len(mdps))
    res = gda_run(gcfg, SoftmaxPartitionPolicy.zeros(task_lattice(mdps)), (mdps, start))
    out = out_dir / (args.out or "gda_trace.csv")
    res.trace.write_csv(out)
    summary = out_dir / "gda_result.json"
    summary.write_text(json.dumps({"belief": np.asarray(res.prior[1]).tolist(),
                                   "chosen_iteration": res.chosen_iteration,
                                   "policy": res.policy.to_dict(),
                                   "variance_policy": res.variance_policy}))
    return [out, summary]


def cmd_cutplane(cfg, seed, out_dir, args):
    mdps = _mdps(cfg, seed) or benchmark_pair()
    res = cutting_plane_run(mdps, cfg["iters"], np.random.default_rng(seed), cfg["tol"],
                            cfg["n_samples"], cfg["burn_in"], cfg["thin"])
    mix = minimax_mixture(mdps, res.best_responses)
    record = res.to_dict()
    record["mixture"] = {"weights": mix.weights.tolist(), "value": mix.value,
                         "nature": mix.nature.tolist()}
    out = out_dir / (args.out or "cutplane.json")
    out.write_text(json.dumps(record))
    return [out]


def cmd_bandit_surface(cfg, seed, out_dir, args):
    mean, se = regret_surface(tuple(cfg["fixed"]), cfg["a2"], cfg["b2"], cfg["gamma"],
                              cfg["horizon_trunc"], cfg["n_mc"], seed, cfg["n_max"])
    out = out_dir / (args.out or "bandit_surface.csv")
    write_surface_csv(out, cfg["a2"], cfg["b2"], mean, se)
    return [out]


def cmd_bandit_worstcase(cfg, seed, out_dir, args):
    res = worst_case_prior(cfg["n_arms"], cfg["gamma"], cfg["a_grid"], cfg["horizon_trunc"], cfg["n_mc"],
                           seed, cfg["n_max"])
    out = out_dir / (args.out or "bandit_worstcase.csv")
    write_rows(out, ["a", "regret", "se"], zip(res.grid, res.regrets, res.ses))
    return [out]


COMMANDS = {
    "gen-mdps": cmd_gen_mdps,
    "two-mdp-curve": cmd_two_mdp_curve,
    "three-mdp-grid": cmd_three_mdp_grid,
    "compare16": cmd_compare16,
    "gda": cmd_gda,
    "cutplane": cmd_cutplane,
    "bandit-surface": cmd_bandit_surface,
    "bandit-worstcase": cmd_bandit_worstcase,
}


GLOBAL_DEFAULTS = {"seed": 0, "config": None, "out_dir": ".", "threads": 1, "out": None}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; the
    # subcommand copy must not overwrite a value given before it
    default = (lambda k: argparse.SUPPRESS) if suppress else GLOBAL_DEFAULTS.get
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default("seed"))
    common.add_argument("--config", default=default("config"),
                        help="JSON file overriding the subcommand defaults")
    common.add_argument("--out-dir", default=default("out_dir"))
    common.add_argument("--threads", type=int, default=default("threads"), help="BLAS thread limit")
    common.add_argument("--out", default=default("out"), help="output file name inside --out-dir")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minimax-bayes", description=__doc__,
                                     parents=[_global_flags(False)])
    common = _global_flags(True)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("two-mdp-curve", "three-mdp-grid", "gda", "cutplane"):
            p.add_argument("--mdps", help="JSON file written by gen-mdps")
        if name == "cutplane":
            p.add_argument("--iters", type=int)
        if name == "gda":
            p.add_argument("--iterations", type=int)
        if name == "two-mdp-curve":
            p.add_argument("--psrl-update", action="store_true", default=None)
        if name == "gen-mdps":
            p.add_argument("--n-mdps", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k, None) for k in ("mdps", "iters", "iterations", "psrl_update", "n_mdps")}
    cfg = load_config(args.command, args.config, overrides)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=args.threads):
        outputs = COMMANDS[args.command](cfg, args.seed, out_dir, args)
    manifest = write_manifest(out_dir, args.command, {**cfg, "threads": args.threads}, args.seed,
                              [str(p) for p in outputs])
    for p in list(outputs) + [manifest]:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
