"""Run every shipped experiment config and write plot-ready CSVs under ``out/``.

Usage: ``python scripts/run_all.py [--threads N] [--out DIR]``
"""
import argparse
import dataclasses
import time
from pathlib import Path

from graphspde import harness
from graphspde.config import load_config

ROOT = Path(__file__).resolve().parents[1]
RUNNERS = {
    "heat_rate.toml": harness.run_fem_rate,
    "stochastic_rate.toml": harness.run_fem_rate,
    "delta_sweep.toml": harness.run_delta_sweep,
    "trunc_sweep.toml": harness.run_truncation_sweep,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default=str(ROOT / "out"))
    args = ap.parse_args()
    status = 0
    for name, runner in RUNNERS.items():
        cfg = load_config(ROOT / "configs" / name)
        out = Path(args.out) / name.removesuffix(".toml")
        cfg = dataclasses.replace(cfg, out=str(out))
        t0 = time.perf_counter()
        rep = runner(cfg, threads=args.threads)
        harness.write_report(rep, out)
        slope = "" if rep.slope is None else f" slope={rep.slope:.3f}+-{rep.slope_se:.3f}"
        print(f"{name:22s} {'PASS' if rep.passed else 'FAIL'}{slope} ({time.perf_counter() - t0:.1f}s) -> {out}")
        status |= not rep.passed
    cfg = load_config(ROOT / "configs" / "validate.toml")
    suite = harness.run_validation_suite(cfg)
    harness.write_report(suite.as_report(), Path(args.out) / "validate")
    print(f"{'validate.toml':22s} {'PASS' if suite.passed else 'FAIL'}")
    return status | (not suite.passed)


if __name__ == "__main__":
    raise SystemExit(main())
