"""Run every checked-in experiment config through the CLI.

Usage: python3 scripts/run_experiments.py [--out DIR] [--strict] [NAME ...]

Each config goes through ``run-all``; the Q-learning trend config also runs
``qlearn-compare``. Outputs land in ``DIR/<config name>/``.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from dhrl.cli import main as dhrl_main

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
EXTRA = {"qlearn_trend": ["qlearn-compare"]}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*", help="config stems (default: all)")
    parser.add_argument("--out", default=str(ROOT / "results"))
    parser.add_argument("--strict", action="store_true")
    args = parser.parse_args(argv)
    names = args.names or sorted(p.stem for p in CONFIGS.glob("*.json"))
    status = 0
    for name in names:
        for command in ["run-all", *EXTRA.get(name, [])]:
            t0 = time.perf_counter()
            cmd = [command, "--config", str(CONFIGS / f"{name}.json"), "--out", str(Path(args.out) / name)]
            code = dhrl_main(cmd + (["--strict"] if args.strict else []))
            print(f"{name} {command}: exit {code} in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
            status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
