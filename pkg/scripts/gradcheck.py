"""Finite-difference check of the full network's analytic gradients."""
import argparse

import numpy as np

from netselect import neural_core as nc


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--coords", type=int, default=100, help="coordinates sampled per layer")
    ap.add_argument("--eps", type=float, default=1e-5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    for T, padding, kind, head in ((8, "same", "bce", "sigmoid"), (10, "valid", "bce", "sigmoid"),
                                   (10, "valid", "mse", "identity"), (10, "valid", "mae", "identity")):
        arch = nc.ArchConfig(num_features=3, conv_channels=(4, 4, 4, 4), lstm_hidden=6, fc_hidden=(5, 3),
                             padding=padding, final_activation=head)
        params = nc.init_params(arch, args.seed)
        X = rng.normal(size=(4, T, 3))
        y = rng.integers(0, 2, 4).astype(float) if kind == "bce" else rng.random(4)
        res = nc.gradient_check(params, X, y, kind, args.coords, args.eps, args.seed)
        print(f"T={T} padding={padding} loss={kind}")
        for layer, (n, err) in res.items():
            print(f"  {layer:6s} checked {n:4d}  max rel err {err:.2e}")


if __name__ == "__main__":
    main()
