"""Perturbed-reference safety suite: do corridor constraints pull curb-crossing references back?"""

import argparse
import json
import sys

from corridor._json import dumps
from corridor.config import load_settings
from corridor.experiments import safety_suite


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config")
    ap.add_argument("--out", help="write the per-scene table as JSON")
    args = ap.parse_args()

    summary = safety_suite(args.count, args.seed, load_settings(args.config)).to_dict()
    print(f"{'seed':>5} {'kind':<9} {'status':<14} {'ref':>4} {'opt':>4} {'curb':>4}")
    for r in summary["rows"]:
        print(
            f"{r['seed']:>5} {r['kind']:<9} {r['status']:<14} {r['reference_collisions']:>4} "
            f"{r['optimized_collisions']:>4} {r['optimized_curb_collisions']:>4}"
        )
    brief = {k: v for k, v in summary.items() if k != "rows"}
    print(json.dumps(brief, indent=1))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(dumps(summary))
    return 0 if summary["optimal_curb_collisions"] == 0 and summary["dominance_violations"] == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
