"""Learn Q and R on noisy demonstrations and print the loss curve."""

import argparse
import warnings

from corridor.config import load_settings
from corridor.experiments import fit_dataset
from corridor.planner import fit_weights
from corridor.qp import DegenerateGradientWarning


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--lr", type=float, default=1e-2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--kind", default="cut-in")
    ap.add_argument("--config")
    args = ap.parse_args()

    settings = load_settings(args.config)
    data = fit_dataset(args.count, args.seed, settings, args.kind)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateGradientWarning)
        res = fit_weights(data, settings.planner, args.steps, args.lr)
    every = max(1, args.steps // 10)
    for k, loss in enumerate(res.history):
        if k % every == 0 or k == len(res.history) - 1:
            print(f"step {k:>4}  loss {loss:.6f}")
    print(f"Q_diag {res.Q_diag.round(4).tolist()}  R_diag {res.R_diag.round(4).tolist()}")
    print(f"degenerate-gradient warnings: {len(caught)}")


if __name__ == "__main__":
    main()
