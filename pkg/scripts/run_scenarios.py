#!/usr/bin/env python3
"""Run every subcommand on the shipped scenarios, outputs under out/."""

import argparse
import sys
from pathlib import Path

# Fix Windows encoding
if sys.platform == 'win32':
    import io
    sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding='utf-8')
    sys.stderr = io.TextIOWrapper(sys.stderr.buffer, encoding='utf-8')

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from dotenv import load_dotenv
load_dotenv()

from binsense.cli import main as binsense_main

ROOT = Path(__file__).parent.parent
CV = ROOT / "scenarios" / "cv_paper.yaml"
TRACK = ROOT / "scenarios" / "track_paper.yaml"


def main() -> int:
    parser = argparse.ArgumentParser(description="Run the shipped scenarios end to end")
    parser.add_argument("--reps", type=int, default=None, help="Override bench replications")
    parser.add_argument("--skip-bench", action="store_true", help="Only simulate, estimate and track")
    args = parser.parse_args()

    runs = [
        ["simulate", "--config", str(CV)],
        ["estimate-cv", "--config", str(CV)],
        ["estimate-cv", "--config", str(CV), "--estimator", "svm2p", "--out", "out/cv_paper_svm2p"],
        ["simulate", "--config", str(TRACK)],
        ["track", "--config", str(TRACK)],
    ]
    if not args.skip_bench:
        reps = ["--reps", str(args.reps)] if args.reps else []
        runs.append(["bench", "--config", str(CV), "--estimator", "svm2p"] + reps)
        runs.append(["bench", "--config", str(TRACK)] + reps)

    print("="*70)
    print("BINSENSE SCENARIOS")
    print("="*70)
    failures = 0
    for argv in runs:
        print(f"\n$ binsense {' '.join(argv)}")
        code = binsense_main(argv)
        if code != 0:
            print(f"❌ exit {code}")
            failures += 1
    print()
    print("="*70)
    print("✅ All runs completed" if not failures else f"⚠️  {failures} run(s) failed")
    print("="*70)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
