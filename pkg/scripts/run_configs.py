"""Run every shipped configuration through the CLI and report exit codes.

    python3 scripts/run_configs.py [--quick]

--quick shrinks horizons and replica counts through overrides so the whole
set finishes in about a minute; outputs land where each config says (out/).
"""
import argparse
import subprocess
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent

JOBS = [
    ("speed-curve", "speed_homogeneous.ini"),
    ("derivative-curve", "derivative_ue.ini"),
    ("nonmono-scan", "nonmono.ini"),
    ("trap-census", "traps.ini"),
    ("validate-bounds", "bounds.ini"),
    ("coupling-diag", "coupling_d1.ini"),
]

QUICK = ["--run.horizon=2000", "--run.replicas=20", "--run.seeds=20", "--run.networks=20",
         "--run.tail_samples=5000", "--run.occupation_boxes=1"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    worst = 0
    for cmd, ini in JOBS:
        t = time.time()
        argv = [sys.executable, "-m", "rcwalk.cli", "-q", cmd, str(ROOT / "configs" / ini)]
        if args.quick:
            argv += QUICK
        rc = subprocess.run(argv, cwd=ROOT).returncode
        worst = max(worst, rc)
        print(f"{cmd:18s} {ini:24s} exit={rc} {time.time() - t:6.1f}s", flush=True)
    return worst


if __name__ == "__main__":
    sys.exit(main())
