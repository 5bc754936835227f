"""Command-line entry point: ``graphspde <subcommand> CONFIG [--seed N] [--out DIR] [--threads N]``.

Exit status is 0 only when every criterion of the invoked suite passes.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, load_config
from .fem import dump_matrix_market
from .graph import dump_graph, truncate
from .solver import dump_trajectory, integrate

log = logging.getLogger("graphspde")


def _load(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed_base"] = args.seed
        if not isinstance(cfg.seeds, int):
            changes["seeds"] = len(cfg.seeds)
    if args.out is not None:
        changes["out"] = args.out
    if args.threads is not None:
        changes["threads"] = args.threads
    cfg = dataclasses.replace(cfg, **changes)
    if args.out is None:
        cfg.out = os.path.normpath(cfg.resolve(cfg.out))
    return cfg


def _print_report(rep: harness.ErrorReport):
    print(f"{rep.experiment}: {'PASS' if rep.passed else 'FAIL'}")
    for r in rep.rows:
        print(f"  level {r['level']}: {rep.param}={r['param']} error={r['error']} stderr={r['stderr']}")
    if rep.slope is not None:
        print(f"  slope={rep.slope:.4f} +- {rep.slope_se:.4f}")
    for k in sorted(rep.measured):
        print(f"  {k}={rep.measured[k]}")


def cmd_experiment(args, runner):
    cfg = _load(args)
    rep = runner(cfg, threads=cfg.threads)
    harness.write_report(rep, cfg.out, cfg.timing)
    _print_report(rep)
    return 0 if rep.passed else 1


def cmd_validate(args):
    cfg = _load(args)
    suite = harness.run_validation_suite(cfg)
    rep = suite.as_report()
    harness.write_report(rep, cfg.out, cfg.timing)
    for c in suite.checks:
        extras = " ".join(f"{k}={v}" for k, v in c.items() if k not in ("name", "passed"))
        print(f"{c['name']}: {'PASS' if c['passed'] else 'FAIL'} {extras}")
    return 0 if suite.passed else 1


def cmd_build_graph(args):
    cfg = _load(args)
    ctx = harness.build_context(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "graph.toml").write_text(dump_graph(ctx.graph))
    print(f"graph: {len(ctx.graph.vertices)} vertices, {len(ctx.graph.edges)} edges -> {out / 'graph.toml'}")
    if ctx.unbounded and cfg.R is not None:
        tg = truncate(ctx.graph, cfg.R)
        (out / "graph_truncated.toml").write_text(dump_graph(tg))
        print(f"truncated at R={cfg.R}: {len(tg.vertices)} vertices -> {out / 'graph_truncated.toml'}")
    if ctx.table is not None:
        lines = ["edge,z,alpha,beta"]
        for k in sorted(ctx.table.levels):
            for z, comp in zip(ctx.table.levels[k], ctx.table.components[k]):
                lines.append(f"{k},{z:.17g},{ctx.field.alpha(k, z):.17g},{ctx.field.beta(k, z):.17g}")
        (out / "coefficients.csv").write_text("\n".join(lines) + "\n")
        print(f"coefficient table -> {out / 'coefficients.csv'}")
    return 0


def cmd_run(args):
    cfg = _load(args)
    ctx = harness.build_context(cfg)
    st = harness.make_setup(ctx)
    n, _ = harness.steps_for(cfg, st.space.hmin, st.space.hmin)
    inst = harness.make_instance(cfg, st, n)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if args.format == "csv" else "bin"
    for seed in cfg.seed_list() if cfg.stochastic else [cfg.seed_base]:
        stream = harness.base_stream(cfg, st, seed, n)
        traj = integrate(inst, stream, save_every=args.save_every)
        path = out / f"trajectory_seed{seed}.{ext}"
        dump_trajectory(traj, path, args.format)
        print(f"seed {seed}: {len(traj.times)} states, |u(T)|={np.linalg.norm(traj.final):.6g} -> {path}")
    return 0


def cmd_dump_matrices(args):
    cfg = _load(args)
    ctx = harness.build_context(cfg)
    st = harness.make_setup(ctx)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("M_delta", "M", "A", "S"):
        dump_matrix_market(getattr(st.ops, name), out / f"{name}.mtx")
    print(f"dim={st.ops.dim} kappa1={st.ops.kappa1:.6g} -> {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="graphspde", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    commands = {
        "validate": cmd_validate,
        "build-graph": cmd_build_graph,
        "run": cmd_run,
        "fem-rate": lambda a: cmd_experiment(a, harness.run_fem_rate),
        "delta-sweep": lambda a: cmd_experiment(a, harness.run_delta_sweep),
        "trunc-sweep": lambda a: cmd_experiment(a, harness.run_truncation_sweep),
        "dump-matrices": cmd_dump_matrices,
    }
    for name, fn in commands.items():
        sp = sub.add_parser(name)
        sp.add_argument("config", help="experiment TOML file")
        sp.add_argument("--seed", type=int, default=None, help="first seed (overrides seed_base)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="worker threads for the seed loop")
        if name == "run":
            sp.add_argument("--format", choices=("csv", "bin"), default="csv")
            sp.add_argument("--save-every", type=int, default=None)
        sp.set_defaults(func=fn)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, harness.InsufficientLevels, harness.InsufficientSeeds, harness.GammaTooFat) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
