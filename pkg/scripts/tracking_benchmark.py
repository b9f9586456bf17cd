"""Print per-filter position RMSE over many seeded tracking runs."""

import argparse
import sys
import time

import numpy as np

from taylorpn import filters as F


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--noise-free", action="store_true", help="run with zero process and observation noise")
    args = parser.parse_args(argv)

    cfg = F.TrackingConfig(q=0.0, gamma=0.0) if args.noise_free else F.TrackingConfig()
    model = F.tracking_model(cfg)
    rmse = {kind: [] for kind in F.FILTERS}
    start = time.perf_counter()
    for seed in range(args.seeds):
        states, ys = F.simulate(model, cfg.x0, cfg.steps, seed)
        init = F.GaussianBelief(np.array(cfg.x0), cfg.prior_var * np.eye(4))
        for kind in rmse:
            rmse[kind].append(F.position_rmse(F.run_filter(model, kind, ys, init), states))
    for kind, vals in rmse.items():
        vals = np.asarray(vals)
        print(f"{kind:>11}  median {np.median(vals):10.4g}  mean {vals.mean():10.4g}  max {vals.max():10.4g}")
    print(f"{args.seeds} seeds in {time.perf_counter() - start:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
