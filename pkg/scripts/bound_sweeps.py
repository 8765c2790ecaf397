"""Random-instance sweeps of both Jacobian norm bounds and an eta probe."""
import argparse
from pathlib import Path

import numpy as np

from sa_dyn import bounds as bd
from sa_dyn.attention import HeadWeights, MSAWeights, StepConfig


def summarize(name, checks):
    slack = np.array([c.slack for c in checks])
    print(f"{name}: {sum(c.satisfied for c in checks)}/{len(checks)} satisfied  "
          f"slack min {slack.min():.3g} median {np.median(slack):.3g} mean {slack.mean():.3g}")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--out", default="out/bounds")
    args = p.parse_args()
    out = Path(args.out)
    seeds = range(args.instances)

    p3 = bd.prop3_sweep(seeds)
    cb = bd.castin_sweep(seeds)
    bd.checks_to_csv(out / "normalized_step_bound.csv", p3)
    bd.checks_to_csv(out / "msa_lipschitz_bound.csv", cb)
    summarize("normalized step", p3)
    summarize("msa lipschitz", cb)

    # large-eta behaviour with a linear attention surrogate
    rng = np.random.default_rng(0)
    w = bd.gaussian_weights(8, 2, rng)
    lin = MSAWeights(tuple(HeadWeights(0 * h.wq, 0 * h.wk, h.wv) for h in w.heads), w.wo)
    x = rng.standard_normal((4, 8))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    rows, sup = bd.eta_limit_probe(lin, StepConfig(1.0), [0.0] + list(np.logspace(-2, 4, 13)), x)
    print("eta probe (linear attention):")
    for eta, n in rows:
        print(f"  eta {eta:10.3g}  ||J_step|| {n:.5f}")
    print(f"  sup {sup:.5f}")


if __name__ == "__main__":
    main()
