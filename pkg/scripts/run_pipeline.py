"""Run solve, verify, simulate and asymptotics for one config and print the verdicts.

Usage:
    python3 scripts/run_pipeline.py configs/tanh1d.toml [--out out/tanh1d] [--threads 1]
"""

import argparse
import json
import sys
from pathlib import Path

from robust_liquidation.cli import main

REPORTS = {"verify": "certificate.json", "simulate": "saddle.json", "asymptotics": "report.json"}


def run(config: str, out: str | None, threads: int) -> int:
    extra = ["--threads", str(threads)] + (["--out", out] if out else [])
    worst = 0
    for cmd in ("solve", "verify", "simulate", "asymptotics"):
        code = main([cmd, "--config", config, *extra])
        print(f"{cmd:12s} exit {code}")
        if code == 2:
            return code
        worst = max(worst, code)
    if out:
        for cmd, name in REPORTS.items():
            path = Path(out) / name
            if path.exists():
                print(f"{name}: passed={json.loads(path.read_text()).get('passed')}")
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out")
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args()
    sys.exit(run(a.config, a.out, a.threads))
