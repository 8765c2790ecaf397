"""Jacobian norms of attention and of the normalised step against token count.

Writes token_sweep.csv with the sample-mean norms per S.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from sa_dyn import bounds as bd
from sa_dyn.attention import StepConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--h", type=int, default=4)
    p.add_argument("--std", type=float, default=0.03)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--radius", type=float, default=100.0)
    p.add_argument("--anisotropy", type=float, default=3.0)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 64, 128, 256])
    p.add_argument("--weight-seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", default="out/token_sweep")
    args = p.parse_args()

    out = Path(args.out)
    for ws in args.weight_seeds:
        t0 = time.perf_counter()
        w = bd.gaussian_weights(args.d, args.h, np.random.default_rng(ws), std=args.std)
        rows = bd.token_sweep(w, StepConfig(args.eta), args.sizes, args.samples,
                              args.radius, args.anisotropy, seed=ws)
        bd.token_sweep_to_csv(out / f"token_sweep_w{ws}.csv", rows)
        print(f"weights seed {ws} ({time.perf_counter() - t0:.0f}s)")
        print(f"{'S':>5} {'jac_msa':>10} {'jac_step':>10} {'castin':>12}")
        for r in rows:
            print(f"{r.s:5d} {r.msa_norm:10.4f} {r.step_norm:10.5f} {r.castin:12.4g}")


if __name__ == "__main__":
    main()
