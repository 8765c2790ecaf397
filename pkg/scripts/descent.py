"""Energy along the single-head projected flow and the multi-head flow."""
import argparse

import numpy as np

from sa_dyn import energy as en
from sa_dyn.attention import HeadWeights


def unit_rows(rng, s, d):
    x = rng.standard_normal((s, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--s", type=int, default=5)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--h", type=int, default=2)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--seeds", type=int, default=10)
    args = p.parse_args()
    s, d, h = args.s, args.d, args.h

    print(f"{'seed':>4} {'system':>7} {'E0':>12} {'E_end':>12} {'max delta':>11} {'monotone':>8}")
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        std = 1 / np.sqrt(d)
        head = en.symmetric_head(rng.standard_normal((d, d)) * std, rng.standard_normal((d, d)) * std)
        single = en.verify_descent(unit_rows(rng, s, d), "single", head, 1 / np.sqrt(d),
                                   args.dt, args.steps)
        multi = en.verify_descent(unit_rows(rng, s, d), "multi", en.make_orthogonal_heads(d, h, seed),
                                  1 / np.sqrt(d // h), args.dt, args.steps)
        for name, rep in (("single", single), ("multi", multi)):
            print(f"{seed:4d} {name:>7} {rep.values[0]:12.6f} {rep.values[-1]:12.6f} "
                  f"{rep.max_delta:11.3e} {rep.monotone_fraction:8.3f}")

    # an unconstrained value matrix need not descend
    rng = np.random.default_rng(0)
    std = 1 / np.sqrt(d)
    wq, wk = rng.standard_normal((d, d)) * std, rng.standard_normal((d, d)) * std
    free = HeadWeights(wq, wk, rng.standard_normal((d, d)) * 3 * std)
    rep = en.verify_descent(unit_rows(rng, s, d), "single", free, 1 / np.sqrt(d), args.dt, args.steps)
    print(f"unconstrained value: max delta {rep.max_delta:.3e} monotone {rep.monotone_fraction:.3f}")


if __name__ == "__main__":
    main()
